#pragma once

#include "cascadesplit/cascade.hpp"
#include "cascadesplit/dataset.hpp"
#include "cascadesplit/decision.hpp"
#include "cascadesplit/errors.hpp"
#include "cascadesplit/meta.hpp"
#include "cascadesplit/mlp.hpp"
#include "cascadesplit/model_io.hpp"
#include "cascadesplit/morph.hpp"
#include "cascadesplit/nas.hpp"
#include "cascadesplit/pipeline.hpp"
#include "cascadesplit/replay.hpp"
#include "cascadesplit/sample.hpp"
#include "cascadesplit/service.hpp"
#include "cascadesplit/softmax.hpp"
#include "cascadesplit/two_exit.hpp"
#include "cascadesplit/wire.hpp"
