#pragma once

#include <semverify/modelio.hpp>

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace semverify::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitTimeouts = 3;

inline constexpr std::uint64_t kDefaultSeed = 0;

struct SummaryRow {
    std::string label;
    std::size_t sat = 0;
    std::size_t sat_unrealized = 0;
    std::size_t unsat = 0;
    std::size_t timeout = 0;

    std::size_t total() const { return sat + unsat + timeout; }
    /// "sat/unsat/timeout"; sat includes sat_unrealized.
    std::string counts() const;
};

/// Rows follow the first appearance of each label; ids missing from
/// `labels` go to a group named after their power suffix, or "all".
std::vector<SummaryRow> summarize(const std::vector<ResultRecord> &records,
                                  const std::map<std::string, std::string> &labels = {});
SummaryRow total_row(const std::vector<SummaryRow> &rows);

std::string format_table(const std::vector<SummaryRow> &rows);
std::string format_csv(const std::vector<SummaryRow> &rows);

/// "rho=0.25" or "pnr=-10dB".
std::string power_label(const PropertySpec &spec);

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace semverify::cli
