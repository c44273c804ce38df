#pragma once

#include "chordlm/acoustic.hpp"
#include "chordlm/chord.hpp"
#include "chordlm/config.hpp"
#include "chordlm/dataset.hpp"
#include "chordlm/decode.hpp"
#include "chordlm/errors.hpp"
#include "chordlm/eval.hpp"
#include "chordlm/experiments.hpp"
#include "chordlm/markov.hpp"
#include "chordlm/neural.hpp"
#include "chordlm/rnn_lm.hpp"
#include "chordlm/scorer.hpp"
#include "chordlm/synth.hpp"
