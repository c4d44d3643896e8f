// Runs a small three-round active-learning experiment with the mean-teacher
// + high-pass consistency arm and prints per-round metrics.

#include <cstdio>

#include "ssal/harness.hpp"

int main() {
  using namespace ssal::harness;

  ExperimentConfig cfg;
  cfg.seed = 1;
  cfg.data.gen.n_train = 40;
  cfg.data.gen.n_test = 10;
  cfg.train.epochs = 12;
  cfg.al.initial_fraction = 0.1;
  cfg.al.increment = 0.1;
  cfg.al.rounds = 2;
  cfg.al.R = 4;

  ALExperiment e(cfg, load_or_generate(cfg));
  while (!e.done()) {
    const RoundLog& log = e.run_round();
    std::printf("round %zu  labeled %zu (%.0f%%)  f-mAP@0.5 %.3f  v-mAP@0.5 %.3f  mask IoU %.3f\n", log.round,
                log.labeled_count, 100.0 * log.pct_labeled, log.metrics.f_map50, log.metrics.v_map50,
                log.metrics.mask_iou);
    if (!log.selected.empty()) {
      std::printf("  picked");
      for (auto id : log.selected) std::printf(" %u", id);
      std::printf("\n");
    }
  }
}
