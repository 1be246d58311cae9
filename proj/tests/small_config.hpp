// A run small enough for unit tests: a handful of classes, narrow nets, few rounds.
#pragma once

#include "fedcn/experiment.hpp"

namespace fedcn::testing {

inline ExperimentConfig small_config() {
    ExperimentConfig c;
    c.dataset.class_count = 6;
    c.dataset.dim = 8;
    c.dataset.samples_per_class = 40;
    c.dataset.separation = 10.0;
    c.schedule.known_classes = {0, 1, 2, 3};
    c.schedule.novel_stages = {{4, 5}};
    c.federation.participants = 4;
    c.federation.clients_per_round = 2;
    c.federation.known_rounds = 2;
    c.federation.novel_rounds = 2;
    c.federation.local_epochs = 2;
    c.federation.lr = 0.02;
    c.federation.batch_size = 32;
    c.federation.alpha = 1.0;
    c.federation.memory_capacity = 64;
    c.hidden = {16};
    c.representation_dim = 8;
    c.seeds = {7};
    return c;
}

}  // namespace fedcn::testing
