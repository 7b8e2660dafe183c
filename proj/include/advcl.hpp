#ifndef ADVCL_HPP
#define ADVCL_HPP

#include "advcl/analysis.hpp"
#include "advcl/attacks.hpp"
#include "advcl/autograd.hpp"
#include "advcl/checkpoint.hpp"
#include "advcl/clusterfit.hpp"
#include "advcl/config.hpp"
#include "advcl/data.hpp"
#include "advcl/errors.hpp"
#include "advcl/evaluate.hpp"
#include "advcl/experiment.hpp"
#include "advcl/finetune.hpp"
#include "advcl/frequency.hpp"
#include "advcl/io.hpp"
#include "advcl/losses.hpp"
#include "advcl/model.hpp"
#include "advcl/optim.hpp"
#include "advcl/pretrain.hpp"
#include "advcl/random.hpp"
#include "advcl/tensor.hpp"
#include "advcl/version.hpp"

#endif // ADVCL_HPP
