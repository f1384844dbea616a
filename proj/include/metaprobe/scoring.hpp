#pragma once

#include <span>
#include <string>
#include <string_view>

namespace metaprobe::paradigm {

/// Decides whether a prediction matches any gold alias.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual bool judge(std::string_view prediction, std::span<const std::string> gold) = 0;
  virtual std::string name() const = 0;
};

/// Normalized exact match against any alias.
class ExactMatchJudge final : public Judge {
 public:
  bool judge(std::string_view prediction, std::span<const std::string> gold) override;
  std::string name() const override { return "normalized-exact-match"; }
};

bool score_answer(std::string_view prediction, std::span<const std::string> gold, Judge& judge);

}  // namespace metaprobe::paradigm
