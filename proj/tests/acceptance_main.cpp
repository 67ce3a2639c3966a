// Acceptance suite for the reference benchmark: runs every criterion at its
// pinned threshold and prints one PASS/FAIL line per criterion.
//
//   it_acceptance [--workdir DIR] [--only 1,4,5] [--reuse]
//
// --reuse picks up checkpoints left in the workdir by a previous run instead
// of retraining, which is useful while iterating on later criteria.

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "ithroat/bench.hpp"

int main(int argc, char** argv) {
    ithroat::bench::RefConfig cfg;
    ithroat::bench::BenchOptions options;
    options.workdir = "acceptance_work";

    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--workdir" && i + 1 < argc) {
            options.workdir = argv[++i];
        } else if (arg == "--only" && i + 1 < argc) {
            std::string list = argv[++i];
            std::size_t pos = 0;
            while (pos < list.size()) {
                std::size_t comma = list.find(',', pos);
                if (comma == std::string::npos) comma = list.size();
                options.only.push_back(std::stoi(list.substr(pos, comma - pos)));
                pos = comma + 1;
            }
        } else if (arg == "--reuse") {
            options.reuse_checkpoints = true;
        } else {
            std::fprintf(stderr, "usage: %s [--workdir DIR] [--only 1,2,...] [--reuse]\n",
                         argv[0]);
            return 2;
        }
    }

    auto results = ithroat::bench::run_criteria(cfg, options);
    std::size_t passed = 0;
    for (const auto& r : results)
        if (r.pass) ++passed;
    std::printf("%zu/%zu criteria passed\n", passed, results.size());
    return ithroat::bench::all_passed(results) ? 0 : 1;
}
