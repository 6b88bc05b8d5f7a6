#include <cstdio>

#include "elemental/error.hpp"
#include "elemental/llm.hpp"

namespace elemental {

namespace detail {
const std::map<std::string, std::string>& prompt_templates();
}

void FeedbackReport::validate() const {
  const std::size_t n = theta.size();
  if (n == 0) throw ConfigurationError("feedback report has no weights");
  if (feature_names.size() != n || demo_counts.per_step_mean.size() != n ||
      policy_counts.per_step_mean.size() != n) {
    throw ConfigurationError("feedback report: " + std::to_string(n) + " weights but " +
                             std::to_string(feature_names.size()) + " names, " +
                             std::to_string(demo_counts.per_step_mean.size()) +
                             " demo counts and " +
                             std::to_string(policy_counts.per_step_mean.size()) + " policy counts");
  }
  if (eval_window < 1) throw ConfigurationError("eval_window must be >= 1");
}

nlohmann::json FeedbackReport::to_json() const {
  return {{"demo_counts", demo_counts.to_json()},
          {"policy_counts", policy_counts.to_json()},
          {"feature_names", feature_names},
          {"theta", theta},
          {"mean_irl_reward", mean_irl_reward},
          {"mean_episode_length", mean_episode_length},
          {"eval_window", eval_window},
          {"obs_dim", obs_dim}};
}

const std::string& prompt_template(const std::string& name) {
  const auto& all = detail::prompt_templates();
  const auto it = all.find(name);
  if (it == all.end()) throw ConfigurationError("no prompt template named '" + name + "'");
  return it->second;
}

std::string fill_template(const std::string& text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const auto close = text.find('}', i + 1);
      if (close != std::string::npos) {
        const std::string key = text.substr(i + 1, close - i - 1);
        const bool ident = !key.empty() && key.find_first_not_of(
                                               "abcdefghijklmnopqrstuvwxyz_0123456789") ==
                                               std::string::npos;
        if (ident) {
          const auto it = values.find(key);
          if (it == values.end()) throw ConfigurationError("no value for placeholder {" + key + "}");
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += text[i++];
  }
  return out;
}

std::string code_output_instruction(std::size_t obs_dim) {
  return fill_template(prompt_template("code_output"),
                       {{"obs_dim", std::to_string(obs_dim)},
                        {"max_index", std::to_string(obs_dim == 0 ? 0 : obs_dim - 1)}});
}

std::vector<ChatMessage> build_initial_prompt(const EnvSpec& spec, const std::string& task_description,
                                              const std::vector<ImageData>& demo_images,
                                              const PromptOptions& options) {
  if (task_description.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ConfigurationError("task description is empty");
  }
  std::string demo;
  switch (options.demo) {
    case DemoPresentation::kKeyframes:
      if (demo_images.empty()) throw ConfigurationError("keyframe prompt needs at least one image");
      demo = fill_template(prompt_template("demo_keyframes"),
                           {{"keyframe_count", std::to_string(demo_images.size())}});
      break;
    case DemoPresentation::kSuperimposed:
      if (demo_images.empty()) throw ConfigurationError("demonstration prompt needs an image");
      demo = prompt_template("demo_superimposed");
      break;
    case DemoPresentation::kText:
      if (options.text_demo.empty()) throw ConfigurationError("text demonstration is empty");
      demo = fill_template(prompt_template("demo_text"), {{"observations", options.text_demo}});
      break;
    case DemoPresentation::kNone:
      break;
  }
  const std::string user_text =
      fill_template(prompt_template("initial_user"), {{"task_obs_code_string", spec.source_text},
                                                      {"task_description", task_description},
                                                      {"demo_description", demo}});

  ChatMessage user{"user", {ContentPart::of_text(user_text)}};
  if (options.demo == DemoPresentation::kKeyframes ||
      options.demo == DemoPresentation::kSuperimposed) {
    for (const auto& img : demo_images) user.parts.push_back(ContentPart::of_image(img));
  }
  user.parts.push_back(ContentPart::of_text("\n" + code_output_instruction(spec.obs_dim)));
  return {ChatMessage::text("system", prompt_template("system")), std::move(user)};
}

std::string format_weights(const std::vector<std::string>& names, std::span<const double> theta) {
  std::string out = "{";
  for (std::size_t i = 0; i < theta.size(); ++i) {
    char buf[64];
    // Avoid printing "-0.000".
    const double v = (theta[i] > -0.0005 && theta[i] < 0.0005) ? 0.0 : theta[i];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    if (i > 0) out += ", ";
    out += "'" + names.at(i) + "': " + buf;
  }
  return out + "}";
}

std::vector<ChatMessage> build_reflection_prompt(const FeedbackReport& report) {
  report.validate();
  auto listing = [&](const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i > 0) out += "\n";
      out += report.feature_names[i] + ": " + format_shortest(values[i]);
    }
    return out;
  };
  const std::string text = fill_template(
      prompt_template("reflection"),
      {{"demo_episode_length", format_shortest(report.demo_counts.mean_episode_length)},
       {"demo_features", listing(report.demo_counts.per_step_mean)},
       {"eval_avg_horizon", std::to_string(report.eval_window)},
       {"policy_features", listing(report.policy_counts.per_step_mean)},
       {"irl_reward", format_shortest(report.mean_irl_reward)},
       {"policy_episode_length", format_shortest(report.mean_episode_length)},
       {"weights", format_weights(report.feature_names, report.theta)},
       {"code_output_instruction",
        report.obs_dim > 0 ? code_output_instruction(report.obs_dim) : std::string()}});
  return {ChatMessage::text("user", text)};
}

FeatureProgram request_feature_program(LlmClient& client, const std::vector<ChatMessage>& prompt,
                                       const EnvSpec& spec, std::span<const Observation> samples,
                                       const GenerationOptions& options) {
  if (options.max_retries < 0) throw ConfigurationError("max_retries must be >= 0");
  std::vector<Observation> fallback;
  if (samples.empty()) {
    fallback.emplace_back(spec.obs_dim, 0.0);
    samples = fallback;
  }
  LlmRequest request{options.model, prompt, options.temperature, options.max_tokens};
  std::vector<std::string> tracebacks;
  for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
    const LlmResponse response = client.chat(request);
    std::string traceback;
    try {
      FeatureProgram program = parse_feature_program(extract_code_block(response.text));
      if (program.required_obs_dim() > spec.obs_dim) {
        traceback = "the program reads obs[" + std::to_string(program.required_obs_dim() - 1) +
                    "] but the observation only has " + std::to_string(spec.obs_dim) +
                    " entries (valid indices 0.." + std::to_string(spec.obs_dim - 1) + ")";
      } else {
        const ValidationReport report = validate_program(program, spec, samples);
        if (report.ok) return program;
        traceback = report.traceback;
      }
    } catch (const ExtractionError& e) {
      traceback = std::string("ExtractionError: ") + e.what();
    } catch (const ParseError& e) {
      traceback = std::string("ParseError: ") + e.what();
    } catch (const ConfigurationError& e) {
      traceback = std::string("ProgramError: ") + e.what();
    }
    tracebacks.push_back(traceback);
    request.messages.push_back(ChatMessage::text("assistant", response.text));
    request.messages.push_back(ChatMessage::text(
        "user", fill_template(prompt_template("traceback"),
                              {{"traceback", traceback},
                               {"code_output_instruction", code_output_instruction(spec.obs_dim)}})));
  }
  throw GenerationFailed(std::move(tracebacks));
}

}  // namespace elemental
