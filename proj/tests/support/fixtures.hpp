#pragma once

#include <filesystem>
#include <string>

#include "dilie/features.hpp"

namespace dilie::testsupport {

// Shared seeded extractor: the blob is written once next to the test binary
// and reused across suites (it is ~160 MB and costs a couple of seconds).
inline const std::string& test_weights_path() {
    static const std::string path = [] {
        const std::string p = "test-weights-vgg19.dwb";
        if (!std::filesystem::exists(p)) dilie::write_seeded_extractor(p, 0);
        return p;
    }();
    return path;
}

inline const dilie::FeatureExtractor& test_extractor() {
    static const dilie::FeatureExtractor ext = dilie::load_extractor(test_weights_path());
    return ext;
}

// Fresh scratch directory under the working dir.
inline std::string scratch_dir(const std::string& tag) {
    const std::string dir = "scratch/" + tag;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace dilie::testsupport
