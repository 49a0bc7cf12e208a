#pragma once

#include "detection.hpp"
#include "problems.hpp"

namespace asyncdet {

// Everything one simulated execution needs. The seed in engine.seed is a
// default; run_once overrides it per run.
struct RunSetup {
    FixedPointProblem problem;
    ResidualSpec residual;
    EngineConfig engine;
    DetectionConfig detection;
};

struct RunOutput {
    RunResult result;
    std::shared_ptr<DetectionBase> protocol;
};

inline RunOutput run_once(const RunSetup& setup, std::uint64_t seed) {
    EngineConfig cfg = setup.engine;
    cfg.seed = seed;
    Engine engine(setup.problem, setup.residual, cfg);
    auto protocol = make_protocol(setup.detection, setup.problem, setup.residual);
    RunOutput out;
    out.result = engine.run(*protocol);
    out.protocol = std::move(protocol);
    return out;
}

} // namespace asyncdet
