#pragma once

// Independent reference values shared by the unit tests and the acceptance run.

#include "cneval/affect.hpp"
#include "cneval/textmetrics.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace cneval::testing {

struct ReadabilityCase {
    std::string text;
    TextStats stats;
    double fre;
    double fkgl;
};

// Frozen from tests/oracles/readability_oracle.py (exact rational arithmetic).
inline const std::vector<ReadabilityCase> kReadabilityCases = {
    {"The cat sat.", {3, 1, 3}, 119.19, -2.62},
    {"Hate is never the answer.", {5, 1, 7}, 83.32, 2.88},
    {"We should talk. Listen first!", {5, 2, 6}, 102.7775, -0.455},
    {"Everyone deserves respect, regardless of where they come from.", {9, 1, 16}, 47.3, 8.897777777777778},
    {"Really?! Yes... we mean it.", {5, 3, 6}, 103.62333333333333, -0.78},
    {"no terminator here at all", {5, 1, 8}, 66.4, 5.24},
    {"A table, a little apple and a simple candle.", {9, 1, 14}, 66.1, 6.275555555555556},
    {"It's 2024, isn't it? Things change.", {6, 2, 6}, 119.19, -2.62},
    {"Rhythm myths fly by.", {4, 1, 4}, 118.175, -2.23},
    {"Communities flourish when neighbours understand one another. Misinformation divides; conversation unites "
     "people!",
     {12, 2, 33},
     -31.905,
     19.2},
};

// Independent flow oracle: rank labels per side by (count desc, name asc),
// then count pairs for every (source node, target node) combination.
inline std::multiset<std::tuple<std::string, std::string, std::size_t>> brute_flows(
    const std::vector<std::pair<EmotionLabel, EmotionLabel>>& pairs, std::size_t top_n) {
    auto keep = [&](bool source) {
        std::map<std::string, std::size_t> freq;
        for (const auto& p : pairs) ++freq[std::string(to_string(source ? p.first : p.second))];
        std::vector<std::pair<std::size_t, std::string>> ranked;
        for (const auto& [name, c] : freq) ranked.emplace_back(c, name);
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        std::set<std::string> kept;
        for (std::size_t i = 0; i < ranked.size() && (top_n == 0 || i < top_n); ++i) kept.insert(ranked[i].second);
        return kept;
    };
    const auto ks = keep(true), kt = keep(false);
    std::vector<std::string> nodes{"other"};
    for (auto l : all_emotion_labels()) nodes.emplace_back(to_string(l));
    std::multiset<std::tuple<std::string, std::string, std::size_t>> out;
    for (const auto& s : nodes) {
        for (const auto& t : nodes) {
            std::size_t c = 0;
            for (const auto& [a, b] : pairs) {
                const std::string an(to_string(a)), bn(to_string(b));
                const std::string sn = ks.count(an) ? an : "other";
                const std::string tn = kt.count(bn) ? bn : "other";
                if (sn == s && tn == t) ++c;
            }
            if (c) out.emplace(s, t, c);
        }
    }
    return out;
}

}  // namespace cneval::testing
