// pegvm - PEG bytecode compiler and parsing virtual machine
#pragma once

#include "pegvm/grammar.hpp"
#include "pegvm/interpret.hpp"
#include "pegvm/code.hpp"
#include "pegvm/compiler.hpp"
#include "pegvm/optimizer.hpp"
#include "pegvm/bytecode.hpp"
#include "pegvm/vm.hpp"
