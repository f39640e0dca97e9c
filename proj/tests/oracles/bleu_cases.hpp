#pragma once

// Frozen from tests/oracles/bleu_oracle.py (Counter n-grams, exact fractions).

namespace mmx::testing {

struct BleuCase {
  const char* hyp;
  const char* ref;
  double corpus;    // the pair scored as a one-sentence corpus
  double smoothed;  // sentence score
};

inline constexpr BleuCase kBleuCases[] = {
    {"the cat sat on the mat", "the cat sat on the mat", 1.0, 1.0},
    {"the the the the the the", "the cat sat on the mat", 0.0, 0.22957488466614329},
    {"the cat sat on the mat", "the cat sat on the red mat", 0.67318213824174866, 0.67318213824174866},
    {"a cat is on the mat", "the cat is on the mat", 0.75983568565159254, 0.75983568565159254},
    {"the quick brown fox jumps", "the quick brown dog jumps over the lazy fox", 0.0, 0.21814551486868625},
    {"slow down because a pedestrian is crossing", "slow down because a pedestrian is crossing ahead",
     0.8668778997501817, 0.8668778997501817},
    {"stop at the red light", "stop because the light is red", 0.0, 0.27821195481929917},
    {"turn left at the junction", "turn left at the junction ahead of the car", 0.44932896411722156,
     0.44932896411722156},
    {"merge carefully as a car is merging from the right lane", "slow down as a car is merging from the right",
     0.67865026815867269, 0.67865026815867269},
    {"keep speed , road is clear", "accelerate , the road ahead is clear", 0.0, 0.24187711037036175},
};

inline constexpr double kBleuCorpus = 0.53358492398780211;

}  // namespace mmx::testing
