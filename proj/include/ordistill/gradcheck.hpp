#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ordistill/tensor.hpp"

namespace ordistill::gradcheck {

inline constexpr double kStep = 1e-4;
inline constexpr double kPrimitiveTolerance = 1e-4;
inline constexpr double kEndToEndTolerance = 1e-3;
/// Differences below this are treated as exact agreement.
inline constexpr double kAbsoluteFloor = 1e-7;
inline constexpr int kTrials = 5;

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// |a - n| / max(|a|, |n|), or 0 when |a - n| <= kAbsoluteFloor.
double relative_error(double analytic, double numeric);

/// Max relative error between the tape gradient of `fn` and central finite
/// differences, over every element of every input that requires a gradient.
double check(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs, double step = kStep);

struct Report {
    std::string op;
    double max_relative_error = 0;
    double tolerance = 0;
    int trials = 0;
    bool passed = false;
};

/// Names of the checks run by default (every primitive plus composed paths).
std::vector<std::string> default_ops();
/// All known checks, including test fixtures excluded from the default run.
std::vector<std::string> all_ops();

/// Runs one named check, or the default suite when `op` is empty. Throws
/// ErrorKind::Config for an unknown name.
std::vector<Report> run(const std::optional<std::string>& op = std::nullopt);

}  // namespace ordistill::gradcheck
