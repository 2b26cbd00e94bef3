#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace imspeech {

inline const std::vector<std::string>& default_words() {
    static const std::vector<std::string> words{"/Ba/", "/Ku/", "/He/", "/Li/"};
    return words;
}

enum class EventKind { Cue, Fixation, Blank, BoldFixation };

constexpr double kCueSeconds = 2.0;
constexpr double kFixationSeconds = 1.0;
constexpr double kBlankSeconds = 2.0;
constexpr double kBoldFixationSeconds = 3.0;
constexpr int kRepeatsPerCue = 4;

struct ParadigmEvent {
    EventKind kind;
    std::optional<int> word;  // cue and blank events carry the cued word
    double start_s;
    double duration_s;

    double end_s() const { return start_s + duration_s; }
};

struct ParadigmSchedule {
    std::vector<std::string> words = default_words();
    std::vector<ParadigmEvent> events;

    double duration_s() const { return events.empty() ? 0.0 : events.back().end_s(); }

    std::size_t count(EventKind kind) const {
        std::size_t n = 0;
        for (const auto& e : events) n += e.kind == kind;
        return n;
    }

    /// Checks ordering, fixed durations and that every blank follows a cue
    /// naming the same word.
    void validate() const {
        double t = 0.0;
        std::optional<int> cued;
        for (std::size_t i = 0; i < events.size(); ++i) {
            const auto& e = events[i];
            const std::string at = "event " + std::to_string(i);
            require(e.start_s >= t - 1e-9, ErrorKind::InvalidParameter, at + " overlaps or is out of order");
            double expected = 0;
            switch (e.kind) {
                case EventKind::Cue: expected = kCueSeconds; break;
                case EventKind::Fixation: expected = kFixationSeconds; break;
                case EventKind::Blank: expected = kBlankSeconds; break;
                case EventKind::BoldFixation: expected = kBoldFixationSeconds; break;
            }
            require(std::abs(e.duration_s - expected) < 1e-9, ErrorKind::InvalidParameter, at + " has wrong duration");
            if (e.kind == EventKind::Cue) {
                require(e.word && *e.word >= 0 && *e.word < static_cast<int>(words.size()),
                        ErrorKind::InvalidParameter, at + ": cue without valid word");
                cued = e.word;
            }
            if (e.kind == EventKind::Blank) {
                require(e.word.has_value() && cued == e.word, ErrorKind::InvalidParameter,
                        at + ": blank not preceded by a cue for its word");
            }
            t = e.end_s();
        }
    }
};

inline std::string to_string(EventKind kind) {
    switch (kind) {
        case EventKind::Cue: return "cue";
        case EventKind::Fixation: return "fixation";
        case EventKind::Blank: return "blank";
        case EventKind::BoldFixation: return "bold_fixation";
    }
    return "?";
}

inline EventKind event_kind_from_string(const std::string& s) {
    if (s == "cue") return EventKind::Cue;
    if (s == "fixation") return EventKind::Fixation;
    if (s == "blank") return EventKind::Blank;
    if (s == "bold_fixation") return EventKind::BoldFixation;
    fail(ErrorKind::Format, "unknown event kind '" + s + "'");
}

inline nlohmann::ordered_json to_json(const ParadigmSchedule& s) {
    nlohmann::ordered_json j;
    j["words"] = s.words;
    auto& ev = j["events"] = nlohmann::ordered_json::array();
    for (const auto& e : s.events) {
        nlohmann::ordered_json o;
        o["kind"] = to_string(e.kind);
        o["word"] = e.word ? nlohmann::ordered_json(*e.word) : nlohmann::ordered_json(nullptr);
        o["start_s"] = e.start_s;
        o["duration_s"] = e.duration_s;
        ev.push_back(std::move(o));
    }
    return j;
}

inline ParadigmSchedule schedule_from_json(const nlohmann::json& j) {
    ParadigmSchedule s;
    try {
        if (j.contains("words")) s.words = j.at("words").get<std::vector<std::string>>();
        for (const auto& o : j.at("events")) {
            ParadigmEvent e{event_kind_from_string(o.at("kind").get<std::string>()), std::nullopt,
                            o.at("start_s").get<double>(), o.at("duration_s").get<double>()};
            if (o.contains("word") && !o.at("word").is_null()) e.word = o.at("word").get<int>();
            s.events.push_back(e);
        }
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorKind::Format, std::string("schedule JSON: ") + ex.what());
    }
    s.validate();
    return s;
}

/// Cue blocks for every word: 2 s cue, up to four (1 s fixation + 2 s blank)
/// pairs, 3 s bold fixation. Blocks are presented in seeded random order;
/// when trials_per_word is not a multiple of four the last block of each word
/// carries the remainder.
inline ParadigmSchedule generate_schedule(int trials_per_word, std::uint64_t seed = 0,
                                          std::vector<std::string> words = default_words()) {
    require(trials_per_word >= 1, ErrorKind::InvalidParameter, "trials_per_word must be >= 1");
    require(!words.empty(), ErrorKind::InvalidParameter, "word list is empty");

    const int n_words = static_cast<int>(words.size());
    const int blocks_per_word = (trials_per_word + kRepeatsPerCue - 1) / kRepeatsPerCue;
    std::vector<int> order;
    for (int w = 0; w < n_words; ++w) order.insert(order.end(), blocks_per_word, w);
    Rng rng(Rng::derive(seed, 0x5c4ed));
    rng.shuffle(order);

    // Pair counts are assigned chronologically so the truncated block is the
    // word's last one.
    std::vector<int> remaining(n_words, trials_per_word);
    std::vector<std::pair<int, int>> blocks;
    for (int w : order) {
        const int pairs = std::min(remaining[w], kRepeatsPerCue);
        remaining[w] -= pairs;
        blocks.emplace_back(w, pairs);
    }

    ParadigmSchedule s;
    s.words = std::move(words);
    double t = 0.0;
    auto push = [&](EventKind k, std::optional<int> w, double d) {
        s.events.push_back({k, w, t, d});
        t += d;
    };
    for (const auto& [w, pairs] : blocks) {
        push(EventKind::Cue, w, kCueSeconds);
        for (int p = 0; p < pairs; ++p) {
            push(EventKind::Fixation, std::nullopt, kFixationSeconds);
            push(EventKind::Blank, w, kBlankSeconds);
        }
        push(EventKind::BoldFixation, std::nullopt, kBoldFixationSeconds);
    }
    return s;
}

}  // namespace imspeech
