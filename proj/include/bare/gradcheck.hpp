#pragma once

// Central finite-difference verification of analytic gradients. Runs in f64.

#include "bare/params.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace bare {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> params;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;

    const GradCheckEntry& entry(const std::string& name) const {
        for (const auto& e : params)
            if (e.name == name) return e;
        throw ValueError("gradcheck report: no entry " + name);
    }
};

// loss_fn builds the scalar objective from bound parameters. It is called once
// with a tape (analytic pass) and then repeatedly without one (probes).
using LossFn = std::function<Tensor<double>(BoundParams<double>&)>;

// Compares externally supplied analytic gradients (one vector per store
// entry) against central differences of value_fn, which re-reads the store on
// every call. Elements whose absolute disagreement stays below abs_floor
// count as clean; see finite_diff_check below for the rationale.
inline GradCheckReport finite_diff_check_given(
    ParamStore<double>& params, const std::function<double()>& value_fn,
    const std::vector<std::vector<double>>& analytic, double step, double tolerance,
    std::size_t max_elems_per_param = 0, std::uint64_t probe_seed = 1,
    double abs_floor = 1e-8) {
    if (analytic.size() != params.size())
        throw ValueError("finite_diff_check_given: gradient count mismatch");
    GradCheckReport report;
    report.tolerance = tolerance;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& entry = params.entries()[pi];
        auto& data = entry.value.data_mut();
        const std::size_t n = data.size();

        std::vector<std::size_t> probes;
        if (max_elems_per_param == 0 || n <= max_elems_per_param) {
            probes.resize(n);
            for (std::size_t i = 0; i < n; ++i) probes[i] = i;
        } else {
            std::mt19937_64 rng(derive_seed(probe_seed, fnv1a64(entry.name)));
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            std::vector<char> seen(n, 0);
            while (probes.size() < max_elems_per_param) {
                const std::size_t i = pick(rng);
                if (seen[i]) continue;
                seen[i] = 1;
                probes.push_back(i);
            }
        }

        GradCheckEntry ge;
        ge.name = entry.name;
        ge.checked = probes.size();
        for (const std::size_t i : probes) {
            const double saved = data[i];
            data[i] = saved + step;
            const double lp = value_fn();
            data[i] = saved - step;
            const double lm = value_fn();
            data[i] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw NumericError("finite_diff_check: non-finite probe value");
            const double g_fd = (lp - lm) / (2.0 * step);
            const double g_an = analytic[pi][i];
            if (std::abs(g_an - g_fd) < abs_floor) continue;
            const double rel = std::abs(g_an - g_fd) / (std::abs(g_an) + std::abs(g_fd) + 1e-12);
            ge.max_rel_err = std::max(ge.max_rel_err, rel);
        }
        report.max_rel_err = std::max(report.max_rel_err, ge.max_rel_err);
        report.params.push_back(std::move(ge));
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

// Relative error per element: |ga - gfd| / (|ga| + |gfd| + 1e-12), maximized
// per parameter. Elements whose absolute disagreement stays below abs_floor
// count as clean: central differences of an O(1) loss carry ~1e-11 of
// rounding noise, which saturates the ratio wherever the true gradient is
// tiny, while any real defect shows up as an absolute gap far above the
// floor. max_elems_per_param == 0 checks every element; otherwise a
// deterministic subsample of that size is probed.
inline GradCheckReport finite_diff_check(ParamStore<double>& params, const LossFn& loss_fn,
                                         double step, double tolerance,
                                         std::size_t max_elems_per_param = 0,
                                         std::uint64_t probe_seed = 1,
                                         double abs_floor = 1e-8) {
    Tape<double> tape;
    BoundParams<double> bound(params, &tape);
    Tensor<double> loss = loss_fn(bound);
    if (!std::isfinite(loss.item()))
        throw NumericError("finite_diff_check: non-finite loss value");
    tape.backward(loss);

    std::vector<std::vector<double>> analytic(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) analytic[i] = bound.grad(i);

    auto value_fn = [&]() {
        BoundParams<double> b(params, nullptr);
        return loss_fn(b).item();
    };
    return finite_diff_check_given(params, value_fn, analytic, step, tolerance,
                                   max_elems_per_param, probe_seed, abs_floor);
}

}  // namespace bare
