#pragma once

// Shared helpers for the unit tests: scripted fixture builders and scratch
// directories.

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "proagym/gateway.hpp"
#include "proagym/trace.hpp"

namespace testing {

using proagym::FixtureEntry;
using proagym::Json;

inline FixtureEntry reply(std::vector<std::string> match, const Json& body, bool repeat = false) {
    FixtureEntry e;
    e.match = std::move(match);
    e.response = body.dump();
    e.repeat = repeat;
    return e;
}

inline FixtureEntry reply_text(std::vector<std::string> match, std::string text, bool repeat = false) {
    FixtureEntry e;
    e.match = std::move(match);
    e.response = std::move(text);
    e.repeat = repeat;
    return e;
}

inline Json agent_reply(const Json& task, std::string response = "") {
    return Json{{"Purpose", "p"}, {"Thoughts", "t"}, {"Proactive Task", task}, {"Response", std::move(response)}};
}

inline Json verdict(bool accepted, std::string thought = "because") {
    return Json{{"thought", std::move(thought)}, {"judgment", accepted ? "accepted" : "rejected"}};
}

inline const char* const kPredict = "Events (Time Ascending)";
inline const char* const kJudge = "Observations (Time Ascending)";
inline const char* const kRefine = "Draft Prediction";
inline const char* const kTopK = "Candidate Limit";

inline std::string source_dir() { return PROAGYM_SOURCE_DIR; }

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
    ScratchDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("proagym-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
