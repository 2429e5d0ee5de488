#pragma once

#include "roadseg/dataset.hpp"
#include "roadseg/image.hpp"
#include "roadseg/inference.hpp"
#include "roadseg/models/model.hpp"
#include "roadseg/objectives.hpp"
#include "roadseg/synthetic.hpp"
#include "roadseg/training/checkpoint.hpp"
#include "roadseg/training/trainer.hpp"
