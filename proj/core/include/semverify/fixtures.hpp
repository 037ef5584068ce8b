#pragma once

#include "semverify/modelio.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace semverify {

struct FixtureProperty {
    std::string id;
    PropertySpec spec;
    VerdictStatus expected = VerdictStatus::Unsat;
};

/// Hand-constructed models whose verdicts follow from their weights.
struct Fixture {
    std::string name;
    std::uint64_t seed = 0;
    ModelSet models;
    std::vector<FixtureProperty> properties;
    /// Set for grid fixtures; `properties` then lists its expansion.
    std::optional<BenchmarkManifest> benchmark;
};

/// robust-2d, robust-4d, planted-sat-2d, planted-sat-4d, identity-gen,
/// constant-gen, zero-weight, rho-trend.
const std::vector<std::string> &fixture_names();

/// Throws InvalidArgument on an unknown name.
Fixture build_fixture(const std::string &name, std::uint64_t seed = 0);

inline constexpr const char *kExpectedFile = "expected.json";

/// Models, one <id>.property.json per property (or benchmark.json for grid
/// fixtures) and expected.json. Byte-deterministic for a given seed.
void write_fixture(const Fixture &fixture, const std::filesystem::path &dir);
Fixture make_fixture(const std::string &name, std::uint64_t seed, const std::filesystem::path &dir);

/// Property id to expected verdict, as written by write_fixture.
std::map<std::string, VerdictStatus> read_expected(const std::filesystem::path &dir);

NetworkGraph identity_generator(std::size_t d);
NetworkGraph constant_generator(std::vector<float> values);

} // namespace semverify
