#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "covexplain/corpus.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 gen{std::random_device{}()};
        path_ = std::filesystem::temp_directory_path() / ("covexplain_" + tag + "_" + std::to_string(gen()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

inline covexplain::corpus::RawPost make_post(std::string id, std::int64_t ts, covexplain::corpus::StanceLabel label,
                                             std::string text = "hello world") {
    covexplain::corpus::RawPost p;
    p.id = std::move(id);
    p.timestamp = ts;
    p.text = std::move(text);
    p.description = "bio";
    p.state = "CA";
    p.race = "white";
    p.race_pic = "white";
    p.gender = "female";
    p.label = label;
    return p;
}

}  // namespace testutil
