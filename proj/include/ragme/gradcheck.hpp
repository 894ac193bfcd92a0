#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ragme/graph.hpp"
#include "ragme/params.hpp"

namespace ragme::nn {

// Central finite-difference check of analytic gradients at float64.
// `forward` rebuilds the graph from the store and returns the scalar loss id.
// Checks every coordinate of the named parameters (or a strided subset for
// large ones) and returns the worst relative error.
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    Eigen::Index worst_coord = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

inline GradCheckResult gradient_check(
    ParamStore<double>& store,
    const std::function<int(Graph<double>&, const Attached&)>& forward,
    const std::vector<std::string>& param_names, double h = 1e-4,
    Eigen::Index max_coords_per_param = 64) {
    GradCheckResult res;

    Graph<double> g;
    Attached ids = store.attach(g, true);
    int loss = forward(g, ids);
    g.backward(loss);

    for (const auto& name : param_names) {
        Parameter<double>& p = store.at(name);
        const MatX<double> analytic = g.grad(ids.at(name));
        Eigen::Index n = p.value.size();
        Eigen::Index stride = std::max<Eigen::Index>(1, n / max_coords_per_param);
        for (Eigen::Index c = 0; c < n; c += stride) {
            double orig = p.value.data()[c];

            p.value.data()[c] = orig + h;
            Graph<double> gp;
            Attached idp = store.attach(gp, false);
            double fp = gp.value(forward(gp, idp))(0, 0);

            p.value.data()[c] = orig - h;
            Graph<double> gm;
            Attached idm = store.attach(gm, false);
            double fm = gm.value(forward(gm, idm))(0, 0);

            p.value.data()[c] = orig;

            double num = (fp - fm) / (2.0 * h);
            double ana = analytic.data()[c];
            double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = name;
                res.worst_coord = c;
                res.analytic = ana;
                res.numeric = num;
            }
        }
    }
    return res;
}

}  // namespace ragme::nn
