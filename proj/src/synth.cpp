#include "gaqp/synth.hpp"

#include "gaqp/vae.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace gaqp {

SynthData make_synthetic(const SynthConfig &cfg)
{
    static const char *regions[] = {"north", "south", "east", "west", "central", "coast", "valley", "mountain"};
    static const char *carriers[] = {"alpha", "bravo", "charlie", "delta", "echo"};

    SynthData out;
    out.header = {"region", "hour", "carrier", "distance", "fare", "passengers"};
    std::ostringstream config;
    config << "region=categorical\nhour=categorical\ncarrier=categorical\n"
           << "distance=numeric:" << cfg.numeric_bins << "\nfare=numeric:" << cfg.numeric_bins
           << "\npassengers=categorical\n";
    out.config_text = config.str();
    std::istringstream in(out.config_text);
    out.config = SchemaConfig::parse(in);

    Rng rng(cfg.seed);
    const auto k = std::max<std::size_t>(1, cfg.clusters);
    std::vector<double> weights(k);
    for (std::size_t c = 0; c != k; ++c)
        weights[c] = 1.0 + static_cast<double>((c * 5) % k);
    std::discrete_distribution<std::size_t> cluster(weights.begin(), weights.end());
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    out.cells.reserve(cfg.rows);
    for (std::size_t i = 0; i != cfg.rows; ++i) {
        const auto c = cluster(rng);
        const auto cd = static_cast<double>(c);
        const auto region = unif(rng) < 0.6 ? c % 8 : std::uniform_int_distribution<std::size_t>(0, 7)(rng);
        const double hour_center = std::fmod(6.0 + 2.5 * cd, 24.0);
        const auto hour = static_cast<long>(std::lround(hour_center + 3.0 * normal(rng))) % 24;
        const auto carrier = unif(rng) < 0.5 ? c % 5 : std::uniform_int_distribution<std::size_t>(0, 4)(rng);
        const double distance = std::exp(0.8 + 0.25 * cd + 0.4 * normal(rng));
        const double fare = std::max(2.5, 2.5 + 1.8 * distance + normal(rng));
        const double lambda = 0.4 + 0.3 * static_cast<double>(c % 4);
        const auto passengers = 1 + std::min<long>(5, std::poisson_distribution<long>(lambda)(rng));

        out.cells.push_back({regions[region], std::to_string((hour + 24) % 24), carriers[carrier],
                             format_double(std::round(distance * 100.0) / 100.0),
                             format_double(std::round(fare * 100.0) / 100.0), std::to_string(passengers)});
    }
    return out;
}

Relation synthetic_relation(const SynthConfig &cfg)
{
    const auto data = make_synthetic(cfg);
    return build_relation(data.header, data.cells, data.config);
}

} // namespace gaqp
