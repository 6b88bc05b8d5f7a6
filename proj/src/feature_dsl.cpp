#include "elemental/feature_dsl.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "elemental/error.hpp"

namespace elemental {

ExprPtr make_constant(double value) {
  return std::make_shared<const Expr>(Expr{Expr::Constant{value}});
}
ExprPtr make_obs(std::size_t index) {
  return std::make_shared<const Expr>(Expr{Expr::ObsRef{index}});
}
ExprPtr make_unary(UnaryOp op, ExprPtr child) {
  return std::make_shared<const Expr>(Expr{Expr::Unary{op, std::move(child)}});
}
ExprPtr make_binary(BinaryOp op, ExprPtr left, ExprPtr right) {
  return std::make_shared<const Expr>(
      Expr{Expr::Binary{op, std::move(left), std::move(right)}});
}
ExprPtr make_clamp(ExprPtr child, double lo, double hi) {
  return std::make_shared<const Expr>(Expr{Expr::Clamp{std::move(child), lo, hi}});
}

std::string format_shortest(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

// ---------------------------------------------------------------------------
// FeatureProgram

namespace {

void collect_max_index(const Expr& e, std::size_t& max_plus_one) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Expr::ObsRef>) {
          max_plus_one = std::max(max_plus_one, n.index + 1);
        } else if constexpr (std::is_same_v<T, Expr::Unary>) {
          collect_max_index(*n.child, max_plus_one);
        } else if constexpr (std::is_same_v<T, Expr::Binary>) {
          collect_max_index(*n.left, max_plus_one);
          collect_max_index(*n.right, max_plus_one);
        } else if constexpr (std::is_same_v<T, Expr::Clamp>) {
          collect_max_index(*n.child, max_plus_one);
        }
      },
      e.node);
}

}  // namespace

FeatureProgram::FeatureProgram(std::vector<Feature> features, std::string source_text)
    : features_(std::move(features)), source_text_(std::move(source_text)) {
  if (features_.empty()) throw ConfigurationError("feature program is empty");
  std::set<std::string> seen;
  for (const auto& f : features_) {
    if (f.name.empty()) throw ConfigurationError("feature name is empty");
    if (!f.expr) throw ConfigurationError("feature '" + f.name + "' has no expression");
    if (!seen.insert(f.name).second) {
      throw ConfigurationError("duplicate feature name '" + f.name + "'");
    }
  }
}

std::vector<std::string> FeatureProgram::names() const {
  std::vector<std::string> out;
  out.reserve(features_.size());
  for (const auto& f : features_) out.push_back(f.name);
  return out;
}

std::size_t FeatureProgram::required_obs_dim() const {
  std::size_t max_plus_one = 0;
  for (const auto& f : features_) collect_max_index(*f.expr, max_plus_one);
  return max_plus_one;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

constexpr int kMaxDepth = 200;

class LineParser {
 public:
  LineParser(std::string_view line, int line_no) : s_(line), line_no_(line_no) {}

  Feature parse_line() {
    skip_ws();
    const std::size_t name_col = pos_;
    std::string name = identifier();
    if (name.empty()) fail("expected feature name", name_col);
    skip_ws();
    if (!consume(':')) fail("expected ':' after feature name '" + name + "'", pos_);
    ExprPtr expr = expression(0);
    skip_ws();
    if (pos_ < s_.size()) {
      fail(std::string("unexpected character '") + s_[pos_] + "'", pos_);
    }
    return Feature{std::move(name), std::move(expr)};
  }

 private:
  [[noreturn]] void fail(const std::string& msg, std::size_t col) const {
    throw ParseError(msg, line_no_, static_cast<int>(col) + 1);
  }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\r')) {
      ++pos_;
    }
  }

  bool consume(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  static bool ident_start(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
  }
  static bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }
  static bool digit(char c) { return c >= '0' && c <= '9'; }

  std::string identifier() {
    skip_ws();
    const std::size_t start = pos_;
    if (pos_ < s_.size() && ident_start(s_[pos_])) {
      ++pos_;
      while (pos_ < s_.size() && ident_char(s_[pos_])) ++pos_;
    }
    return std::string(s_.substr(start, pos_ - start));
  }

  bool at_number() {
    skip_ws();
    if (pos_ >= s_.size()) return false;
    const char c = s_[pos_];
    return digit(c) || (c == '.' && pos_ + 1 < s_.size() && digit(s_[pos_ + 1]));
  }

  double number() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && digit(s_[pos_])) ++pos_;
    if (pos_ < s_.size() && s_[pos_] == '.') {
      ++pos_;
      while (pos_ < s_.size() && digit(s_[pos_])) ++pos_;
    }
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < s_.size() && (s_[p] == '+' || s_[p] == '-')) ++p;
      if (p < s_.size() && digit(s_[p])) {
        pos_ = p;
        while (pos_ < s_.size() && digit(s_[pos_])) ++pos_;
      }
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, value);
    if (ec != std::errc() || ptr != s_.data() + pos_ || !std::isfinite(value)) {
      fail("invalid numeric literal", start);
    }
    return value;
  }

  // Signed literal, used for clamp bounds.
  double signed_number() {
    skip_ws();
    double sign = 1.0;
    if (pos_ < s_.size() && (s_[pos_] == '-' || s_[pos_] == '+')) {
      sign = s_[pos_] == '-' ? -1.0 : 1.0;
      ++pos_;
    }
    if (!at_number()) fail("expected numeric literal", pos_);
    return sign * number();
  }

  static int precedence(BinaryOp op) {
    return (op == BinaryOp::kMul || op == BinaryOp::kDiv) ? 2 : 1;
  }

  bool peek_binary(BinaryOp& op) {
    skip_ws();
    if (pos_ >= s_.size()) return false;
    switch (s_[pos_]) {
      case '+': op = BinaryOp::kAdd; return true;
      case '-': op = BinaryOp::kSub; return true;
      case '*': op = BinaryOp::kMul; return true;
      case '/': op = BinaryOp::kDiv; return true;
      default: return false;
    }
  }

  // Precedence climbing; all binary operators are left-associative.
  ExprPtr expression(int min_prec) {
    ExprPtr lhs = unary();
    BinaryOp op;
    while (peek_binary(op) && precedence(op) > min_prec) {
      ++pos_;
      ExprPtr rhs = expression(precedence(op));
      lhs = make_binary(op, std::move(lhs), std::move(rhs));
    }
    return lhs;
  }

  struct DepthGuard {
    explicit DepthGuard(LineParser& p) : p_(p) {
      if (++p_.depth_ > kMaxDepth) p_.fail("expression nested too deeply", p_.pos_);
    }
    ~DepthGuard() { --p_.depth_; }
    LineParser& p_;
  };

  ExprPtr unary() {
    DepthGuard guard(*this);
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '-') {
      ++pos_;
      if (at_number()) return make_constant(-number());
      return make_unary(UnaryOp::kNeg, unary());
    }
    if (pos_ < s_.size() && s_[pos_] == '+') {
      ++pos_;
      return unary();
    }
    return primary();
  }

  std::vector<ExprPtr> call_args(const std::string& fn, std::size_t fn_col, int arity) {
    if (!consume('(')) fail("expected '(' after '" + fn + "'", pos_);
    std::vector<ExprPtr> args;
    for (int i = 0; i < arity; ++i) {
      if (i > 0 && !consume(',')) {
        fail("'" + fn + "' takes " + std::to_string(arity) + " argument(s)", pos_);
      }
      args.push_back(expression(0));
    }
    if (!consume(')')) fail("unclosed '(' in call to '" + fn + "'", fn_col);
    return args;
  }

  ExprPtr primary() {
    skip_ws();
    if (pos_ >= s_.size()) fail("unexpected end of expression", pos_);
    if (at_number()) return make_constant(number());

    if (s_[pos_] == '(') {
      const std::size_t open = pos_;
      ++pos_;
      ExprPtr inner = expression(0);
      if (!consume(')')) fail("unclosed '('", open);
      return inner;
    }

    const std::size_t col = pos_;
    const std::string id = identifier();
    if (id.empty()) fail(std::string("unexpected character '") + s_[pos_] + "'", pos_);

    if (id == "obs") {
      skip_ws();
      const std::size_t open = pos_;
      if (!consume('[')) fail("expected '[' after 'obs'", pos_);
      skip_ws();
      if (pos_ >= s_.size() || !digit(s_[pos_])) {
        fail("unclosed '[': expected a nonnegative integer index", open);
      }
      const std::size_t start = pos_;
      while (pos_ < s_.size() && digit(s_[pos_])) ++pos_;
      std::size_t index = 0;
      auto [ptr, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, index);
      if (ec != std::errc()) fail("observation index out of range", start);
      if (!consume(']')) fail("unclosed '['", open);
      return make_obs(index);
    }

    static const std::pair<const char*, UnaryOp> kUnary[] = {
        {"abs", UnaryOp::kAbs}, {"tanh", UnaryOp::kTanh}, {"exp", UnaryOp::kExp},
        {"sqrt", UnaryOp::kSqrt}, {"neg", UnaryOp::kNeg}};
    for (const auto& [name, op] : kUnary) {
      if (id == name) return make_unary(op, call_args(id, col, 1)[0]);
    }
    if (id == "min" || id == "max") {
      auto args = call_args(id, col, 2);
      return make_binary(id == "min" ? BinaryOp::kMin : BinaryOp::kMax, args[0], args[1]);
    }
    if (id == "clamp") {
      if (!consume('(')) fail("expected '(' after 'clamp'", pos_);
      ExprPtr child = expression(0);
      if (!consume(',')) fail("'clamp' takes 3 arguments (expr, lo, hi)", pos_);
      const double lo = signed_number();
      if (!consume(',')) fail("'clamp' takes 3 arguments (expr, lo, hi)", pos_);
      const double hi = signed_number();
      if (!consume(')')) fail("unclosed '(' in call to 'clamp'", col);
      if (lo > hi) fail("clamp lower bound exceeds upper bound", col);
      return make_clamp(std::move(child), lo, hi);
    }
    fail("unknown function or identifier '" + id + "'", col);
  }

  std::string_view s_;
  int line_no_;
  std::size_t pos_ = 0;
  int depth_ = 0;
};

}  // namespace

FeatureProgram parse_feature_program(std::string_view text) {
  std::vector<Feature> features;
  std::set<std::string> seen;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    if (auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      Feature f = LineParser(line, line_no).parse_line();
      if (!seen.insert(f.name).second) {
        throw ParseError("duplicate feature name '" + f.name + "'", line_no, 0);
      }
      features.push_back(std::move(f));
    }
    start = end + 1;
  }
  if (features.empty()) throw ParseError("feature program is empty", line_no, 0);
  return FeatureProgram(std::move(features), std::string(text));
}

// ---------------------------------------------------------------------------
// Printer

namespace {

int print_precedence(const Expr& e) {
  if (const auto* b = std::get_if<Expr::Binary>(&e.node)) {
    switch (b->op) {
      case BinaryOp::kAdd:
      case BinaryOp::kSub: return 1;
      case BinaryOp::kMul:
      case BinaryOp::kDiv: return 2;
      default: return 3;
    }
  }
  return 3;
}

const char* unary_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::kNeg: return "neg";
    case UnaryOp::kAbs: return "abs";
    case UnaryOp::kTanh: return "tanh";
    case UnaryOp::kExp: return "exp";
    case UnaryOp::kSqrt: return "sqrt";
  }
  return "?";
}

void print_to(const Expr& e, std::string& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Expr::Constant>) {
          out += format_shortest(n.value);
        } else if constexpr (std::is_same_v<T, Expr::ObsRef>) {
          out += "obs[" + std::to_string(n.index) + "]";
        } else if constexpr (std::is_same_v<T, Expr::Unary>) {
          if (n.op == UnaryOp::kNeg) {
            out += '-';
            // "-2" would re-parse as a literal and "-a + b" would bind wrong.
            const bool wrap = print_precedence(*n.child) < 3 ||
                              std::holds_alternative<Expr::Constant>(n.child->node);
            if (wrap) out += '(';
            print_to(*n.child, out);
            if (wrap) out += ')';
          } else {
            out += unary_name(n.op);
            out += '(';
            print_to(*n.child, out);
            out += ')';
          }
        } else if constexpr (std::is_same_v<T, Expr::Binary>) {
          if (n.op == BinaryOp::kMin || n.op == BinaryOp::kMax) {
            out += n.op == BinaryOp::kMin ? "min(" : "max(";
            print_to(*n.left, out);
            out += ", ";
            print_to(*n.right, out);
            out += ')';
            return;
          }
          const int prec = print_precedence(e);
          const bool wrap_left = print_precedence(*n.left) < prec;
          const bool wrap_right = print_precedence(*n.right) <= prec;
          if (wrap_left) out += '(';
          print_to(*n.left, out);
          if (wrap_left) out += ')';
          switch (n.op) {
            case BinaryOp::kAdd: out += " + "; break;
            case BinaryOp::kSub: out += " - "; break;
            case BinaryOp::kMul: out += " * "; break;
            default: out += " / "; break;
          }
          if (wrap_right) out += '(';
          print_to(*n.right, out);
          if (wrap_right) out += ')';
        } else if constexpr (std::is_same_v<T, Expr::Clamp>) {
          out += "clamp(";
          print_to(*n.child, out);
          out += ", " + format_shortest(n.lo) + ", " + format_shortest(n.hi) + ")";
        }
      },
      e.node);
}

}  // namespace

std::string print_expression(const Expr& expr) {
  std::string out;
  print_to(expr, out);
  return out;
}

std::string print_feature_program(const FeatureProgram& program) {
  std::string out;
  for (const auto& f : program.features()) {
    out += f.name + ": " + print_expression(*f.expr) + "\n";
  }
  return out;
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      [&](const auto& na) -> bool {
        using T = std::decay_t<decltype(na)>;
        const auto& nb = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, Expr::Constant>) {
          return na.value == nb.value;
        } else if constexpr (std::is_same_v<T, Expr::ObsRef>) {
          return na.index == nb.index;
        } else if constexpr (std::is_same_v<T, Expr::Unary>) {
          return na.op == nb.op && structurally_equal(*na.child, *nb.child);
        } else if constexpr (std::is_same_v<T, Expr::Binary>) {
          return na.op == nb.op && structurally_equal(*na.left, *nb.left) &&
                 structurally_equal(*na.right, *nb.right);
        } else {
          return na.lo == nb.lo && na.hi == nb.hi &&
                 structurally_equal(*na.child, *nb.child);
        }
      },
      a.node);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

class Evaluator {
 public:
  Evaluator(std::span<const double> obs, const std::string& feature)
      : obs_(obs), feature_(feature) {}

  double eval(const Expr& e) const {
    return std::visit([&](const auto& n) { return eval_node(n); }, e.node);
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw EvaluationError("feature '" + feature_ + "': " + msg, feature_);
  }

  double checked(double v, const char* what) const {
    if (!std::isfinite(v)) {
      fail("non-finite value (" + format_shortest(v) + ") produced by " + what);
    }
    return v;
  }

  double eval_node(const Expr::Constant& n) const { return n.value; }

  double eval_node(const Expr::ObsRef& n) const {
    if (n.index >= obs_.size()) {
      fail("observation index " + std::to_string(n.index) +
           " is out of range (observation has " + std::to_string(obs_.size()) +
           " entries, valid indices 0.." + std::to_string(obs_.size() - 1) + ")");
    }
    return checked(obs_[n.index], "an observation entry");
  }

  double eval_node(const Expr::Unary& n) const {
    const double x = eval(*n.child);
    switch (n.op) {
      case UnaryOp::kNeg: return -x;
      case UnaryOp::kAbs: return std::abs(x);
      case UnaryOp::kTanh: return std::tanh(x);
      case UnaryOp::kExp: return checked(std::exp(x), "exp");
      case UnaryOp::kSqrt:
        if (x < 0.0) fail("sqrt of negative value " + format_shortest(x));
        return std::sqrt(x);
    }
    return x;
  }

  double eval_node(const Expr::Binary& n) const {
    const double a = eval(*n.left);
    const double b = eval(*n.right);
    switch (n.op) {
      case BinaryOp::kAdd: return checked(a + b, "addition");
      case BinaryOp::kSub: return checked(a - b, "subtraction");
      case BinaryOp::kMul: return checked(a * b, "multiplication");
      case BinaryOp::kDiv:
        if (b == 0.0) fail("division by zero");
        return checked(a / b, "division");
      case BinaryOp::kMin: return std::min(a, b);
      case BinaryOp::kMax: return std::max(a, b);
    }
    return a;
  }

  double eval_node(const Expr::Clamp& n) const {
    return std::clamp(eval(*n.child), n.lo, n.hi);
  }

  std::span<const double> obs_;
  const std::string& feature_;
};

}  // namespace

void evaluate_features_into(const FeatureProgram& program,
                            std::span<const double> obs, std::span<double> out) {
  const auto& features = program.features();
  for (std::size_t i = 0; i < features.size(); ++i) {
    out[i] = Evaluator(obs, features[i].name).eval(*features[i].expr);
  }
}

std::vector<double> evaluate_features(const FeatureProgram& program,
                                      std::span<const double> obs) {
  std::vector<double> out(program.size());
  evaluate_features_into(program, obs, out);
  return out;
}

ValidationReport validate_program(const FeatureProgram& program, const EnvSpec& spec,
                                  std::span<const Observation> samples) {
  ValidationReport report;
  if (samples.empty()) {
    report.traceback = "no sample observations were provided for validation";
    return report;
  }
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s].size() != spec.obs_dim) {
      report.traceback = "sample " + std::to_string(s) + " has " +
                         std::to_string(samples[s].size()) +
                         " entries but the environment observation has " +
                         std::to_string(spec.obs_dim);
      report.sampled_outputs.clear();
      return report;
    }
    try {
      report.sampled_outputs.push_back(evaluate_features(program, samples[s]));
    } catch (const EvaluationError& e) {
      report.traceback = e.what();
      report.sampled_outputs.clear();
      return report;
    }
  }
  report.ok = true;
  return report;
}

std::string extract_code_block(std::string_view llm_text) {
  const std::size_t open = llm_text.find("```");
  if (open == std::string_view::npos) {
    throw ExtractionError("no fenced code block (```) found in the response");
  }
  // The language tag, if any, runs to the end of the opening line.
  std::size_t body = llm_text.find('\n', open + 3);
  if (body == std::string_view::npos) {
    throw ExtractionError("fenced code block is not terminated");
  }
  ++body;
  const std::size_t close = llm_text.find("```", body);
  if (close == std::string_view::npos) {
    throw ExtractionError("fenced code block is not terminated");
  }
  std::string_view content = llm_text.substr(body, close - body);
  while (!content.empty() && (content.back() == '\n' || content.back() == '\r')) {
    content.remove_suffix(1);
  }
  return std::string(content);
}

namespace {

ExprPtr remap(const ExprPtr& e, const std::function<std::size_t(std::size_t)>& mapping) {
  return std::visit(
      [&](const auto& n) -> ExprPtr {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Expr::Constant>) {
          return e;
        } else if constexpr (std::is_same_v<T, Expr::ObsRef>) {
          return make_obs(mapping(n.index));
        } else if constexpr (std::is_same_v<T, Expr::Unary>) {
          return make_unary(n.op, remap(n.child, mapping));
        } else if constexpr (std::is_same_v<T, Expr::Binary>) {
          return make_binary(n.op, remap(n.left, mapping), remap(n.right, mapping));
        } else {
          return make_clamp(remap(n.child, mapping), n.lo, n.hi);
        }
      },
      e->node);
}

}  // namespace

FeatureProgram remap_obs_indices(const FeatureProgram& program,
                                 const std::function<std::size_t(std::size_t)>& mapping) {
  std::vector<Feature> features;
  for (const auto& f : program.features()) {
    features.push_back(Feature{f.name, remap(f.expr, mapping)});
  }
  FeatureProgram tmp(features, "");
  return FeatureProgram(std::move(features), print_feature_program(tmp));
}

FeatureProgram identity_program(std::size_t obs_dim) {
  std::ostringstream text;
  for (std::size_t i = 0; i < obs_dim; ++i) {
    text << "obs_" << i << ": obs[" << i << "]\n";
  }
  return parse_feature_program(text.str());
}

}  // namespace elemental
