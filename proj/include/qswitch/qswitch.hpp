#pragma once

#include "qswitch/bloch_system.hpp"
#include "qswitch/certificates.hpp"
#include "qswitch/controller.hpp"
#include "qswitch/errors.hpp"
#include "qswitch/pauli.hpp"
#include "qswitch/scenario.hpp"
#include "qswitch/switching.hpp"
