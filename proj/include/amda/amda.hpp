#pragma once

#include "amda/attack.hpp"
#include "amda/augment.hpp"
#include "amda/checkpoint.hpp"
#include "amda/corpus.hpp"
#include "amda/eval.hpp"
#include "amda/mixup.hpp"
#include "amda/model.hpp"
#include "amda/train.hpp"
#include "amda/config.hpp"
