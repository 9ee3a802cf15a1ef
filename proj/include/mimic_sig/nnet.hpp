#ifndef MIMIC_SIG_NNET_HPP_
#define MIMIC_SIG_NNET_HPP_

#include "mimic_sig/nnet/checkpoint.hpp"
#include "mimic_sig/nnet/matrix.hpp"
#include "mimic_sig/nnet/network.hpp"
#include "mimic_sig/nnet/tape.hpp"

#endif  // MIMIC_SIG_NNET_HPP_
