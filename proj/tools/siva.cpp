#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <string>

#include "siva/commands.hpp"

namespace {

struct Options {
    std::string config;
    std::string out = ".";
    long long seed = -1;
};

void add_common(CLI::App* cmd, Options& o)
{
    cmd->add_option("--config", o.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "output directory")->capture_default_str();
    cmd->add_option("--seed", o.seed, "random seed, overrides the config")->check(CLI::NonNegativeNumber);
}

siva::app::RunConfig load(const Options& o)
{
    auto c = siva::app::load_config(o.config);
    if (o.seed >= 0) {
        c.seed = static_cast<std::uint64_t>(o.seed);
        c.train.seed = c.seed;
    }
    return c;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Adversarial system identification of structural dynamics models"};
    app.require_subcommand(1);
    Options o;
    auto* simulate = app.add_subcommand("simulate", "generate synthetic state CSVs from a model");
    auto* identify = app.add_subcommand("identify", "train the parameter generator and discriminator");
    auto* select = app.add_subcommand("select", "parameter selection (approaches I-III) and uncertainty");
    auto* sindy = app.add_subcommand("sindy", "sparse regression baseline");
    auto* report = app.add_subcommand("report", "measured vs simulated responses, spectra, MSE table");
    for (auto* cmd : {simulate, identify, select, sindy, report}) add_common(cmd, o);

    CLI11_PARSE(app, argc, argv);
    try {
        const auto c = load(o);
        if (*simulate) siva::app::cmd_simulate(c, o.out);
        if (*identify) siva::app::cmd_identify(c, o.out);
        if (*select) siva::app::cmd_select(c, o.out);
        if (*sindy) siva::app::cmd_sindy(c, o.out);
        if (*report) siva::app::cmd_report(c, o.out);
    } catch (const std::exception& e) {
        siva::app::log(siva::app::LogLevel::Error, e.what());
        return 1;
    }
    return 0;
}
