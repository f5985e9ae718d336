#pragma once

#include "tp/address.hpp"
#include "tp/channel.hpp"
#include "tp/confidentiality.hpp"
#include "tp/config.hpp"
#include "tp/generators.hpp"
#include "tp/kernel.hpp"
#include "tp/log.hpp"
#include "tp/microarch.hpp"
#include "tp/oracle.hpp"
#include "tp/policy.hpp"
#include "tp/properties.hpp"
#include "tp/selector.hpp"
