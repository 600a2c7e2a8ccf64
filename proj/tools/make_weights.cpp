// Writes a deterministic seeded-random extractor weights blob (DWB1 +
// sidecar). Useful for self-contained runs and CI; converted pretrained
// weights can be dropped in through the same container.
#include <CLI11.hpp>

#include <cstdio>

#include "dilie/features.hpp"

int main(int argc, char** argv) {
    CLI::App app{"generate a seeded extractor weights blob"};
    std::string out = "vgg19-seeded.dwb";
    std::uint64_t seed = 0;
    app.add_option("--out", out, "output blob path")->capture_default_str();
    app.add_option("--seed", seed, "init seed")->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    try {
        dilie::write_seeded_extractor(out, seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    std::printf("wrote %s and %s.json\n", out.c_str(), out.c_str());
    return 0;
}
