#pragma once

// Files: CSV time series (t,ch1,ch2,...) and JSON for models, networks,
// epoch records and parameter sets.

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "siva/error.hpp"
#include "siva/nn.hpp"
#include "siva/physics.hpp"
#include "siva/signal.hpp"
#include "siva/train.hpp"

namespace siva::io {

using nlohmann::json;
namespace fs = std::filesystem;

inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// text files

inline std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot open '" + path.string() + "' for writing");
    out << text;
    out.flush();
    require(static_cast<bool>(out), "failed writing '" + path.string() + "'");
}

inline json read_json(const fs::path& path)
{
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw Error("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// CSV

/// Header `t,ch1,...` (or the given channel names), 17 significant digits.
inline std::string csv_string(const signal::TimeSeries& series, const std::vector<std::string>& names = {})
{
    series.validate("csv");
    std::string out = "t";
    for (Eigen::Index c = 0; c < series.channel_count(); ++c)
        out += "," + (names.empty() ? "ch" + std::to_string(c + 1) : names.at(static_cast<std::size_t>(c)));
    out += "\n";
    for (Eigen::Index r = 0; r < series.length(); ++r) {
        out += format_double(series.time(r));
        for (Eigen::Index c = 0; c < series.channel_count(); ++c) out += "," + format_double(series.channels(r, c));
        out += "\n";
    }
    return out;
}

inline void write_csv(const fs::path& path, const signal::TimeSeries& series,
                      const std::vector<std::string>& names = {})
{
    write_text(path, csv_string(series, names));
}

/// Parses a uniform time-series CSV. The sample rate comes from the first
/// and last time stamps; every interval must match it to 1e-6 relative.
inline signal::TimeSeries parse_csv(const std::string& text, const std::string& what = "csv")
{
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), what + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    require(columns >= 2, what + ": need a time column and at least one channel");

    std::vector<std::vector<double>> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        const char* p = line.c_str();
        while (true) {
            char* end = nullptr;
            const double v = std::strtod(p, &end);
            require(end != p, what + ": line " + std::to_string(line_no) + " has a malformed number");
            row.push_back(v);
            while (*end == ' ') ++end;
            if (*end == '\0') break;
            require(*end == ',', what + ": line " + std::to_string(line_no) + " has an unexpected character");
            p = end + 1;
        }
        require(row.size() == columns, what + ": line " + std::to_string(line_no) + " has " +
                                           std::to_string(row.size()) + " fields, expected " +
                                           std::to_string(columns));
        rows.push_back(std::move(row));
    }
    require(rows.size() >= 2, what + ": at least two samples are required");

    signal::TimeSeries s;
    s.start_time = rows.front()[0];
    const double span = rows.back()[0] - rows.front()[0];
    require(span > 0.0, what + ": time column must increase");
    const double dt = span / static_cast<double>(rows.size() - 1);
    s.sample_rate = 1.0 / dt;
    s.channels.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns - 1));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (r > 0)
            require(std::abs(rows[r][0] - rows[r - 1][0] - dt) <= 1e-6 * dt,
                    what + ": non-uniform time spacing at line " + std::to_string(r + 2));
        for (std::size_t c = 1; c < columns; ++c)
            s.channels(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) = rows[r][c];
    }
    // prefer a rate that is an exact integer when the data allows it
    const double rounded = std::round(s.sample_rate);
    if (std::abs(rounded - s.sample_rate) <= 1e-6 * s.sample_rate) s.sample_rate = rounded;
    return s;
}

inline signal::TimeSeries read_csv(const fs::path& path) { return parse_csv(read_text(path), path.string()); }

// ---------------------------------------------------------------------------
// monomial notation: q0, v1, (q0-q1), products with '*', powers with '^'

inline physics::Monomial parse_monomial(const std::string& text)
{
    using physics::FactorKind;
    std::string s;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) s += c;
    require(!s.empty(), "monomial: empty expression");
    physics::Monomial m;
    if (s == "1") return m;

    std::size_t pos = 0;
    auto fail = [&](const std::string& why) { throw Error("monomial '" + text + "': " + why); };
    auto read_int = [&]() {
        std::size_t start = pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
        if (start == pos) fail("expected an index or power");
        return std::stoi(s.substr(start, pos - start));
    };
    auto read_symbol = [&]() {
        if (pos >= s.size() || (s[pos] != 'q' && s[pos] != 'v')) fail("expected 'q' or 'v'");
        return s[pos++];
    };
    while (true) {
        physics::Factor f;
        if (pos < s.size() && s[pos] == '(') {
            ++pos;
            const char a = read_symbol();
            f.i = read_int();
            if (pos >= s.size() || s[pos] != '-') fail("expected '-' in a relative factor");
            ++pos;
            const char b = read_symbol();
            if (a != b) fail("relative factors must pair like states");
            f.j = read_int();
            if (pos >= s.size() || s[pos] != ')') fail("expected ')'");
            ++pos;
            f.kind = a == 'q' ? FactorKind::RelativeDisplacement : FactorKind::RelativeVelocity;
        } else {
            const char a = read_symbol();
            f.i = read_int();
            f.kind = a == 'q' ? FactorKind::Displacement : FactorKind::Velocity;
        }
        if (pos < s.size() && s[pos] == '^') {
            ++pos;
            f.power = read_int();
        }
        m.factors.push_back(f);
        if (pos == s.size()) break;
        if (s[pos] != '*') fail("expected '*' between factors");
        ++pos;
    }
    return m;
}

// ---------------------------------------------------------------------------
// model specs

inline std::string encoding_name(physics::EncodingMode e)
{
    return e == physics::EncodingMode::SciNotation ? "sci" : "direct";
}

inline physics::EncodingMode encoding_from_name(const std::string& s)
{
    if (s == "sci") return physics::EncodingMode::SciNotation;
    if (s == "direct") return physics::EncodingMode::Direct;
    throw Error("unknown encoding '" + s + "' (expected 'direct' or 'sci')");
}

inline json model_to_json(const physics::ModelSpec& m)
{
    json j;
    j["kind"] = physics::to_string(m.kind);
    j["masses_kg"] = m.masses;
    j["mass_scaled"] = m.mass_scaled;
    j["coefficients"] = json::array();
    for (const auto& c : m.coefficients)
        j["coefficients"].push_back(
            {{"name", c.name}, {"unit", c.unit}, {"encoding", encoding_name(c.encoding)}, {"scale", c.scale}});
    if (m.kind == physics::ModelKind::GenericTerms) {
        j["terms"] = json::array();
        for (const auto& t : m.terms) {
            json tj{{"equation", t.equation},
                    {"coefficient", m.coefficients[static_cast<std::size_t>(t.coefficient)].name},
                    {"sign", t.sign},
                    {"monomial", physics::monomial_label(t.monomial)}};
            if (t.abs_power)
                tj["abs_power"] = {{"i", t.abs_power->i},
                                   {"j", t.abs_power->j},
                                   {"exponent", m.coefficients[static_cast<std::size_t>(t.abs_power->exponent_coefficient)].name}};
            j["terms"].push_back(tj);
        }
    }
    return j;
}

/// Built-in kinds take their coefficient list from the library; entries in
/// "coefficients" then override encoding, scale or unit by name.
inline physics::ModelSpec model_from_json(const json& j)
{
    try {
        require(j.is_object(), "model: expected an object");
        require(j.contains("kind"), "model: missing 'kind'");
        require(j.contains("masses_kg"), "model: missing 'masses_kg'");
        const auto kind = physics::model_kind_from_string(j.at("kind").get<std::string>());
        const auto masses = j.at("masses_kg").get<std::vector<double>>();
        physics::ModelSpec m;
        if (kind == physics::ModelKind::DuffingSdof) {
            require(masses.size() == 1, "model: duffing takes exactly one mass");
            m = physics::duffing_model(masses[0]);
        } else if (kind == physics::ModelKind::CoupledLoNo) {
            require(masses.size() == 2, "model: coupled_lo_no takes exactly two masses");
            m = physics::coupled_lo_no_model(masses[0], masses[1]);
        } else {
            m.kind = kind;
            m.masses = masses;
        }
        m.mass_scaled = j.value("mass_scaled", false);

        if (kind == physics::ModelKind::GenericTerms) {
            require(j.contains("coefficients") && j.contains("terms"), "model: generic models need 'coefficients' and 'terms'");
            for (const auto& cj : j.at("coefficients")) {
                physics::CoefficientSpec c;
                c.name = cj.at("name").get<std::string>();
                c.unit = cj.value("unit", "");
                c.scale = cj.value("scale", 0.0);
                c.encoding = cj.contains("encoding") ? encoding_from_name(cj.at("encoding").get<std::string>())
                                                     : physics::default_encoding(c.scale);
                m.coefficients.push_back(c);
            }
            for (const auto& tj : j.at("terms")) {
                physics::Term t;
                t.equation = tj.at("equation").get<int>();
                t.coefficient = m.index_of(tj.at("coefficient").get<std::string>());
                t.sign = tj.value("sign", 1.0);
                t.monomial = parse_monomial(tj.at("monomial").get<std::string>());
                if (tj.contains("abs_power")) {
                    const auto& aj = tj.at("abs_power");
                    t.abs_power = physics::AbsPowerFactor{aj.at("i").get<int>(), aj.value("j", -1),
                                                          m.index_of(aj.at("exponent").get<std::string>())};
                }
                m.terms.push_back(std::move(t));
            }
        } else if (j.contains("coefficients")) {
            for (const auto& cj : j.at("coefficients")) {
                const auto name = cj.at("name").get<std::string>();
                auto& c = m.coefficients[static_cast<std::size_t>(m.index_of(name))];
                if (cj.contains("unit")) c.unit = cj.at("unit").get<std::string>();
                if (cj.contains("scale")) c.scale = cj.at("scale").get<double>();
                if (cj.contains("encoding")) c.encoding = encoding_from_name(cj.at("encoding").get<std::string>());
            }
        }
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw Error(std::string("model: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// networks

inline json mlp_to_json(const nn::Mlp& net)
{
    json layers = json::array();
    for (const auto& l : net.layers) {
        json w = json::array();
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(l.weight.cols()));
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) row[static_cast<std::size_t>(c)] = l.weight(r, c);
            w.push_back(row);
        }
        layers.push_back({{"input_dim", l.weight.cols()},
                          {"output_dim", l.weight.rows()},
                          {"activation", nn::to_string(l.activation)},
                          {"slope", l.slope},
                          {"weight", w},
                          {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return {{"layers", layers}};
}

inline nn::Mlp mlp_from_json(const json& j)
{
    try {
        nn::Mlp net;
        for (const auto& lj : j.at("layers")) {
            nn::DenseLayer l;
            const auto in = lj.at("input_dim").get<Eigen::Index>();
            const auto out = lj.at("output_dim").get<Eigen::Index>();
            l.activation = nn::activation_from_string(lj.at("activation").get<std::string>());
            l.slope = lj.value("slope", 0.2);
            l.weight.resize(out, in);
            const auto& w = lj.at("weight");
            require(static_cast<Eigen::Index>(w.size()) == out, "network: weight row count mismatch");
            for (Eigen::Index r = 0; r < out; ++r) {
                const auto row = w.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
                require(static_cast<Eigen::Index>(row.size()) == in, "network: weight column count mismatch");
                for (Eigen::Index c = 0; c < in; ++c) l.weight(r, c) = row[static_cast<std::size_t>(c)];
            }
            const auto b = lj.at("bias").get<std::vector<double>>();
            require(static_cast<Eigen::Index>(b.size()) == out, "network: bias length mismatch");
            l.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), out);
            if (!net.layers.empty())
                require(net.layers.back().weight.rows() == in, "network: layer dimensions do not chain");
            net.layers.push_back(std::move(l));
        }
        require(!net.layers.empty(), "network: no layers");
        return net;
    } catch (const json::exception& e) {
        throw Error(std::string("network: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// parameters and records

inline json parameters_to_json(const physics::ParameterSet& p)
{
    json j = json::object();
    for (std::size_t i = 0; i < p.size(); ++i) j[p.names[i]] = p.values[i];
    return j;
}

/// Values in the model's coefficient order, looked up by name.
inline physics::ParameterSet parameters_from_json(const json& j, const physics::ModelSpec& model)
{
    require(j.is_object(), "parameters: expected an object of name -> value");
    std::vector<double> values;
    for (const auto& c : model.coefficients) {
        require(j.contains(c.name), "parameters: missing value for '" + c.name + "'");
        values.push_back(j.at(c.name).get<double>());
    }
    require(j.size() == model.coefficients.size(), "parameters: unknown coefficient names present");
    return physics::make_parameters(model, std::move(values));
}

inline json record_to_json(const train::EpochRecord& r)
{
    return {{"epoch", r.epoch},
            {"d_loss", r.d_loss},
            {"adv_loss", r.adv_loss},
            {"mse_loss", r.mse_loss},
            {"param_mean", parameters_to_json(r.param_mean)}};
}

inline train::EpochRecord record_from_json(const json& j, const physics::ModelSpec& model)
{
    train::EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.d_loss = j.at("d_loss").get<double>();
    r.adv_loss = j.at("adv_loss").get<double>();
    r.mse_loss = j.at("mse_loss").get<double>();
    r.param_mean = parameters_from_json(j.at("param_mean"), model);
    return r;
}

}  // namespace siva::io
