#pragma once

#include "sgcd/error.hpp"
#include "sgcd/vocab.hpp"
#include "sgcd/grammar.hpp"
#include "sgcd/automaton.hpp"
#include "sgcd/cfg.hpp"
#include "sgcd/catalog.hpp"
#include "sgcd/cp.hpp"
#include "sgcd/decoder.hpp"
#include "sgcd/eval.hpp"
#include "sgcd/sketcher.hpp"
#include "sgcd/pipeline.hpp"
#include "sgcd/config.hpp"
#include "sgcd/cli.hpp"
