#pragma once

#include "guidedlight/errors.hpp"
#include "guidedlight/traffic_sim.hpp"
#include "guidedlight/teachers.hpp"
#include "guidedlight/mdp_env.hpp"
#include "guidedlight/autodiff.hpp"
#include "guidedlight/policy_net.hpp"
#include "guidedlight/trainer.hpp"
#include "guidedlight/eval_report.hpp"
#include "guidedlight/config.hpp"
