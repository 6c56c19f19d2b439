#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

namespace milrp::testing {

// Scratch directory named after the running test, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        std::string name = "milrp_";
        if (info) name += std::string(info->test_suite_name()) + "_" + info->name();
        path_ = std::filesystem::temp_directory_path() / name;
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

    void write(const std::string& leaf, const std::string& text) const
    {
        std::ofstream(path_ / leaf, std::ios::binary) << text;
    }

private:
    std::filesystem::path path_;
};

} // namespace milrp::testing
