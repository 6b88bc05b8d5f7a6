#pragma once

// Sandboxed feature language. A program is a list of named scalar
// expressions over one observation vector:
//
//   # comment
//   speed: abs(obs[2]) / 10.0
//   near_goal: clamp(1 - sqrt(obs[4] * obs[4] + obs[5] * obs[5]), 0, 1)
//
// Expressions support + - * /, unary minus, abs/tanh/exp/sqrt, min/max and
// clamp with literal bounds. There are no loops, variables or I/O, so
// evaluation always terminates.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "elemental/spec.hpp"

namespace elemental {

enum class UnaryOp { kNeg, kAbs, kTanh, kExp, kSqrt };
enum class BinaryOp { kAdd, kSub, kMul, kDiv, kMin, kMax };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  struct Constant {
    double value;
  };
  struct ObsRef {
    std::size_t index;
  };
  struct Unary {
    UnaryOp op;
    ExprPtr child;
  };
  struct Binary {
    BinaryOp op;
    ExprPtr left;
    ExprPtr right;
  };
  struct Clamp {
    ExprPtr child;
    double lo;
    double hi;
  };

  std::variant<Constant, ObsRef, Unary, Binary, Clamp> node;
};

ExprPtr make_constant(double value);
ExprPtr make_obs(std::size_t index);
ExprPtr make_unary(UnaryOp op, ExprPtr child);
ExprPtr make_binary(BinaryOp op, ExprPtr left, ExprPtr right);
ExprPtr make_clamp(ExprPtr child, double lo, double hi);

struct Feature {
  std::string name;
  ExprPtr expr;
};

class FeatureProgram {
 public:
  // Throws ConfigurationError on empty programs, empty or duplicate names.
  FeatureProgram(std::vector<Feature> features, std::string source_text);

  std::size_t size() const { return features_.size(); }
  const std::vector<Feature>& features() const { return features_; }
  std::vector<std::string> names() const;
  const std::string& source_text() const { return source_text_; }
  // One past the largest referenced observation index (0 if none).
  std::size_t required_obs_dim() const;

 private:
  std::vector<Feature> features_;
  std::string source_text_;
};

// Throws ParseError (with line/column) on syntax errors, duplicate names or
// an empty program.
FeatureProgram parse_feature_program(std::string_view text);

// Canonical text; parses back to a structurally identical program.
std::string print_feature_program(const FeatureProgram& program);
std::string print_expression(const Expr& expr);
bool structurally_equal(const Expr& a, const Expr& b);

// Throws EvaluationError naming the feature on out-of-range indices,
// division by zero, sqrt of a negative value or any non-finite value.
std::vector<double> evaluate_features(const FeatureProgram& program,
                                      std::span<const double> obs);
void evaluate_features_into(const FeatureProgram& program,
                            std::span<const double> obs, std::span<double> out);

struct ValidationReport {
  bool ok = false;
  std::string traceback;  // empty iff ok
  std::vector<std::vector<double>> sampled_outputs;
};

// Never throws; failures are reported with the first error's message.
ValidationReport validate_program(const FeatureProgram& program,
                                  const EnvSpec& spec,
                                  std::span<const Observation> samples);

// Contents of the first ``` fenced block. Throws ExtractionError if absent.
std::string extract_code_block(std::string_view llm_text);

// Rewrites every obs[i] into obs[mapping(i)].
FeatureProgram remap_obs_indices(const FeatureProgram& program,
                                 const std::function<std::size_t(std::size_t)>& mapping);

// obs_0: obs[0], obs_1: obs[1], ... (the plain-IRL baseline features).
FeatureProgram identity_program(std::size_t obs_dim);

// Shortest decimal that round-trips to the same double.
std::string format_shortest(double value);

}  // namespace elemental
