#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "elemental/envs.hpp"
#include "elemental/error.hpp"
#include "elemental/llm.hpp"
#include "elemental/pipeline.hpp"
#include "test_util.hpp"

using namespace elemental;
using json = nlohmann::json;

namespace {

const char* kValid = "Features:\n```\nd: abs(obs[2]) + abs(obs[3])\n```\n";

MockScript script_of(std::vector<std::string> responses) {
  MockScript s;
  for (auto& r : responses) s.turns.push_back({std::move(r), {}});
  return s;
}

std::vector<ChatMessage> simple_prompt() {
  return {ChatMessage::text("system", "You are a feature engineer."), ChatMessage::text("user", "go")};
}

FeedbackReport fixed_report() {
  FeedbackReport r;
  r.feature_names = {"f", "g"};
  r.theta = {0.7, 0.3};
  r.demo_counts.per_step_mean = {0.25, -1.5};
  r.demo_counts.mean_episode_length = 9.0;
  r.policy_counts.per_step_mean = {0.125, 2.0};
  r.mean_irl_reward = 0.6875;
  r.mean_episode_length = 12.0;
  r.obs_dim = 4;
  return r;
}

// Local HTTP endpoint that replays a list of status codes.
class FakeEndpoint {
 public:
  explicit FakeEndpoint(std::vector<int> statuses, int delay_ms = 0)
      : statuses_(std::move(statuses)), delay_ms_(delay_ms) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = hits_++;
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
      const int status = statuses_.at(std::min<std::size_t>(n, statuses_.size() - 1));
      res.status = status;
      if (status == 200) {
        res.set_content(R"({"choices":[{"message":{"content":"hello"},"finish_reason":"stop"}],)"
                        R"("usage":{"prompt_tokens":3,"completion_tokens":1,"total_tokens":4}})",
                        "application/json");
      } else {
        res.set_content("{\"error\":\"status " + std::to_string(status) + "\"}", "application/json");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }

  HttpClientConfig config(int retries, double timeout = 5.0) const {
    HttpClientConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
    c.api_key_env = "";
    c.max_retries = retries;
    c.initial_backoff_seconds = 0.001;
    c.max_backoff_seconds = 0.002;
    c.timeout_seconds = timeout;
    return c;
  }
  int hits() const { return hits_; }
  const std::string& last_body() const { return last_body_; }
  const std::string& last_auth() const { return last_auth_; }

 private:
  httplib::Server server_;
  std::vector<int> statuses_;
  int delay_ms_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  std::string last_body_;
  std::string last_auth_;
  std::thread thread_;
};

LlmRequest hello_request() {
  LlmRequest r;
  r.model = "test-model";
  r.messages = {ChatMessage::text("user", "hi")};
  return r;
}

}  // namespace

TEST(Messages, Validation) {
  EXPECT_THROW(ChatMessage::text("robot", "x").validate(), ConfigurationError);
  EXPECT_THROW((ChatMessage{"user", {}}).validate(), ConfigurationError);
  ChatMessage sys{"system", {ContentPart::of_image({{1, 2}, "image/png"})}};
  EXPECT_THROW(sys.validate(), ConfigurationError);
  ChatMessage user{"user", {ContentPart::of_text("a"), ContentPart::of_image({{1}, "image/png"}),
                            ContentPart::of_text("b")}};
  EXPECT_NO_THROW(user.validate());
  EXPECT_EQ(user.joined_text(), "ab");
  EXPECT_EQ(user.image_count(), 1u);
  EXPECT_THROW(LlmRequest{}.validate(), ConfigurationError);
}

TEST(InitialPrompt, GridworldWithOneImage) {
  const EnvPtr env = make_environment("gridworld-5x5");
  const std::string task = "Move the agent to the top-right corner of the grid";
  const auto msgs = build_initial_prompt(env->spec(), task, {ImageData{{1, 2, 3}, "image/png"}});
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].role, "system");
  EXPECT_NE(msgs[0].joined_text().find("feature engineer"), std::string::npos);
  EXPECT_EQ(msgs[1].role, "user");
  const std::string user = msgs[1].joined_text();
  EXPECT_NE(user.find(task), std::string::npos);
  EXPECT_NE(user.find(env->spec().source_text), std::string::npos);
  EXPECT_NE(user.find("step-by-step"), std::string::npos);
  EXPECT_EQ(msgs[1].image_count(), 1u);
}

TEST(InitialPrompt, ImagesKeepInputOrder) {
  const EnvPtr env = make_environment("gridworld-5x5");
  std::vector<ImageData> imgs;
  for (std::uint8_t i = 0; i < 3; ++i) imgs.push_back({{i}, "image/png"});
  const auto msgs = build_initial_prompt(env->spec(), "reach the goal", imgs);
  std::vector<std::uint8_t> seen;
  for (const auto& p : msgs[1].parts)
    if (p.is_image) seen.push_back(p.image.bytes.at(0));
  EXPECT_EQ(seen, (std::vector<std::uint8_t>{0, 1, 2}));
  EXPECT_NE(msgs[1].joined_text().find("3 keyframes"), std::string::npos) << msgs[1].joined_text();
}

TEST(InitialPrompt, Errors) {
  const EnvPtr env = make_environment("gridworld-5x5");
  EXPECT_THROW(build_initial_prompt(env->spec(), "", {ImageData{{1}, "image/png"}}), ConfigurationError);
  EXPECT_THROW(build_initial_prompt(env->spec(), "  \n", {ImageData{{1}, "image/png"}}), ConfigurationError);
  EXPECT_THROW(build_initial_prompt(env->spec(), "task", {}), ConfigurationError);
  // Text-only presentations need no images.
  PromptOptions none;
  none.demo = DemoPresentation::kNone;
  const auto msgs = build_initial_prompt(env->spec(), "task", {}, none);
  EXPECT_EQ(msgs[1].image_count(), 0u);
  PromptOptions text;
  text.demo = DemoPresentation::kText;
  text.text_demo = "[0.0000, 1.0000]";
  EXPECT_NE(build_initial_prompt(env->spec(), "task", {}, text)[1].joined_text().find("[0.0000, 1.0000]"),
            std::string::npos);
}

TEST(InitialPrompt, Deterministic) {
  const EnvPtr env = make_environment("pointmass");
  const auto a = build_initial_prompt(env->spec(), "reach", {ImageData{{9, 9}, "image/png"}});
  const auto b = build_initial_prompt(env->spec(), "reach", {ImageData{{9, 9}, "image/png"}});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(message_to_json(a[i]), message_to_json(b[i]));
}

TEST(Templates, FillIsSinglePass) {
  EXPECT_EQ(fill_template("a {x} b", {{"x", "{y}"}, {"y", "no"}}), "a {y} b");
  EXPECT_EQ(fill_template("{'f': 1} {x}", {{"x", "2"}}), "{'f': 1} 2");
  EXPECT_THROW(fill_template("{missing}", {}), ConfigurationError);
  EXPECT_THROW(prompt_template("nope"), ConfigurationError);
  for (const char* name : {"system", "initial_user", "code_output", "reflection", "traceback"}) {
    EXPECT_FALSE(prompt_template(name).empty()) << name;
  }
}

TEST(Reflection, WeightsToThreeDecimals) {
  const auto msgs = build_reflection_prompt(fixed_report());
  ASSERT_EQ(msgs.size(), 1u);
  EXPECT_EQ(msgs[0].role, "user");
  const std::string text = msgs[0].joined_text();
  EXPECT_NE(text.find("{'f': 0.700, 'g': 0.300}"), std::string::npos) << text;
  EXPECT_NE(text.find("If the episode lengths are low"), std::string::npos);
  EXPECT_NE(text.find("last 100 steps"), std::string::npos);
  EXPECT_EQ(format_weights({"a", "b"}, std::vector<double>{-0.0001, -0.1234}), "{'a': 0.000, 'b': -0.123}");
}

TEST(Reflection, MismatchedLengthsThrow) {
  FeedbackReport r = fixed_report();
  r.theta = {1.0};
  EXPECT_THROW(build_reflection_prompt(r), ConfigurationError);
  r = fixed_report();
  r.policy_counts.per_step_mean.pop_back();
  EXPECT_THROW(build_reflection_prompt(r), ConfigurationError);
}

TEST(Reflection, GoldenText) {
  const std::string text = build_reflection_prompt(fixed_report())[0].joined_text();
  EXPECT_EQ(text, build_reflection_prompt(fixed_report())[0].joined_text());
  EXPECT_EQ(text, testutil::slurp(std::string(TEST_DATA_DIR) + "/reflection_golden.txt"));
}

// Values in the prompt parse back to exactly the serialized feature counts.
TEST(Reflection, GridworldCountsRoundTrip) {
  const EnvPtr env = make_environment("gridworld-5x5");
  DemoGenOptions o;
  o.count = 20;
  const auto demos = generate_demonstrations(*env, o);
  const auto program = env->gt_program();
  const RewardModel reward({0.25, 0.25, 0.25, 0.25}, program);
  const auto report = make_feedback_report(PolicyModel::tabular_uniform(25, 5), demos, program, reward, *env,
                                           50, RngStream(1, 0));
  const auto expected = feature_expectation(demos.trajectories, program).per_step_mean;
  const std::string text = build_reflection_prompt(report)[0].joined_text();
  const auto demo_block = text.substr(text.find("episode_lengths:"));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::string key = "\n" + program.names()[i] + ": ";
    const auto pos = demo_block.find(key);
    ASSERT_NE(pos, std::string::npos) << key;
    const auto start = pos + key.size();
    const double parsed = std::stod(demo_block.substr(start, demo_block.find('\n', start) - start));
    EXPECT_EQ(parsed, expected[i]);
  }
}

TEST(Mock, CannedResponse) {
  MockLlmClient mock(script_of({"the answer"}));
  const auto r = mock.chat(hello_request());
  EXPECT_EQ(r.text, "the answer");
  EXPECT_EQ(r.finish_reason, "stop");
  EXPECT_EQ(mock.calls(), 1u);
  EXPECT_THROW(mock.chat(hello_request()), MockError);
}

TEST(Mock, FailedExpectationNamesIt) {
  MockScript s;
  s.turns.push_back({"x", {"feature engineer"}});
  MockLlmClient mock(s);
  try {
    mock.chat(hello_request());
    FAIL() << "expected MockError";
  } catch (const MockError& e) {
    EXPECT_NE(std::string(e.what()).find("feature engineer"), std::string::npos);
  }
}

TEST(Mock, ScriptParsing) {
  const auto s = MockScript::parse("{\"response\": \"a\"}\n\n{\"response\": \"b\", \"expect\": [\"x\", \"y\"]}\n");
  ASSERT_EQ(s.turns.size(), 2u);
  EXPECT_EQ(s.turns[1].expect, (std::vector<std::string>{"x", "y"}));
  EXPECT_THROW(MockScript::parse("{\"response\": 1}"), SchemaError);
  EXPECT_THROW(MockScript::parse("{\"response\": \"a\", \"expect\": \"x\"}"), SchemaError);
  EXPECT_THROW(MockScript::parse("not json"), ParseError);
}

TEST(Generation, ValidOnFirstTurn) {
  MockLlmClient mock(script_of({kValid}));
  const auto p = request_feature_program(mock, simple_prompt(), make_environment("gridworld-5x5")->spec(), {});
  EXPECT_EQ(p.names(), std::vector<std::string>{"d"});
  EXPECT_EQ(mock.calls(), 1u);
}

TEST(Generation, TwoFailuresThenSuccess) {
  testutil::TempDir dir("llm");
  MockLlmClient mock(script_of({"no code here", "```\nd: obs[9]\n```", kValid}));
  TranscriptRecorder rec(mock, dir / "transcript.jsonl");
  const auto spec = make_environment("gridworld-5x5")->spec();
  const auto p = request_feature_program(rec, simple_prompt(), spec, {});
  EXPECT_EQ(p.names(), std::vector<std::string>{"d"});
  EXPECT_EQ(mock.calls(), 3u);

  std::istringstream in(testutil::slurp(dir / "transcript.jsonl"));
  std::string line;
  std::vector<json> entries;
  while (std::getline(in, line)) entries.push_back(json::parse(line));
  ASSERT_EQ(entries.size(), 3u);
  int tracebacks = 0;
  for (const auto& m : entries[2]["request"]["messages"]) {
    if (m["role"] == "user" && m["parts"][0]["text"].get<std::string>().find("resulted in the following error") !=
                                   std::string::npos) {
      ++tracebacks;
    }
  }
  EXPECT_EQ(tracebacks, 2);
  const std::string last = entries[2]["request"].dump();
  EXPECT_NE(last.find("ExtractionError"), std::string::npos);
  EXPECT_NE(last.find("obs[9]"), std::string::npos);
}

TEST(Generation, GivesUpAfterOnePlusRetries) {
  MockLlmClient mock(script_of({"bad", "bad", "bad", "bad", kValid}));
  try {
    request_feature_program(mock, simple_prompt(), make_environment("gridworld-5x5")->spec(), {});
    FAIL() << "expected GenerationFailed";
  } catch (const GenerationFailed& e) {
    EXPECT_EQ(e.tracebacks().size(), 4u);
  }
  EXPECT_EQ(mock.calls(), 4u);

  MockLlmClient once(script_of({"bad", kValid}));
  GenerationOptions opts;
  opts.max_retries = 0;
  EXPECT_THROW(request_feature_program(once, simple_prompt(), make_environment("gridworld-5x5")->spec(), {}, opts),
               GenerationFailed);
  EXPECT_EQ(once.calls(), 1u);
}

TEST(Generation, RuntimeFailureOnSamplesIsRetried) {
  const auto spec = make_environment("gridworld-5x5")->spec();
  const std::vector<Observation> samples{{0.0, 0.0, 1.0, 1.0}};
  MockLlmClient mock(script_of({"```\ninv: 1 / obs[0]\n```", kValid}));
  EXPECT_NO_THROW(request_feature_program(mock, simple_prompt(), spec, samples));
  EXPECT_EQ(mock.calls(), 2u);
}

TEST(Transcript, ReplayReproducesPrograms) {
  testutil::TempDir dir("replay");
  const auto spec = make_environment("gridworld-5x5")->spec();
  std::vector<std::string> first;
  {
    MockLlmClient mock(script_of({"junk", kValid, "```\na: obs[0]\nb: obs[1] * 2\n```"}));
    TranscriptRecorder rec(mock, dir / "t.jsonl");
    first.push_back(print_feature_program(request_feature_program(rec, simple_prompt(), spec, {})));
    first.push_back(print_feature_program(request_feature_program(rec, simple_prompt(), spec, {})));
  }
  MockLlmClient replay(MockScript::from_transcript(dir / "t.jsonl"));
  EXPECT_EQ(print_feature_program(request_feature_program(replay, simple_prompt(), spec, {})), first[0]);
  EXPECT_EQ(print_feature_program(request_feature_program(replay, simple_prompt(), spec, {})), first[1]);
  EXPECT_EQ(replay.remaining(), 0u);
}

TEST(Transcript, ImagesRecordedByDigest) {
  testutil::TempDir dir("digest");
  MockLlmClient mock(script_of({"ok"}));
  TranscriptRecorder rec(mock, dir / "t.jsonl");
  const std::vector<std::uint8_t> bytes{'a', 'b', 'c'};
  LlmRequest req;
  req.messages = {ChatMessage{"user", {ContentPart::of_text("look"), ContentPart::of_image({bytes, "image/png"})}}};
  rec.chat(req);
  const auto entry = json::parse(testutil::slurp(dir / "t.jsonl"));
  const auto& part = entry["request"]["messages"][0]["parts"][1];
  EXPECT_EQ(part["sha256"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(part["bytes"], 3);
  EXPECT_EQ(part["media_type"], "image/png");
  EXPECT_EQ(entry["response"]["text"], "ok");
}

TEST(Http, Base64) {
  auto enc = [](const std::string& s) {
    return base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  EXPECT_EQ(enc(""), "");
  EXPECT_EQ(enc("f"), "Zg==");
  EXPECT_EQ(enc("fo"), "Zm8=");
  EXPECT_EQ(enc("foo"), "Zm9v");
  EXPECT_EQ(enc("foobar"), "Zm9vYmFy");
}

TEST(Http, RequestBodyEmbedsImagesAsDataUrls) {
  LlmRequest r;
  r.model = "m";
  r.temperature = 0.5;
  r.max_tokens = 7;
  r.messages = {ChatMessage::text("system", "s"),
                ChatMessage{"user", {ContentPart::of_text("t"), ContentPart::of_image({{1, 2, 3}, "image/png"})}}};
  const auto body = HttpLlmClient::request_body(r);
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["max_tokens"], 7);
  EXPECT_EQ(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
  EXPECT_EQ(body["messages"][1]["content"][0]["text"], "t");
}

TEST(Http, ParseResponse) {
  const auto r = HttpLlmClient::parse_response(
      R"({"choices":[{"message":{"content":"x"},"finish_reason":"length"}],"usage":{"total_tokens":9}})");
  EXPECT_EQ(r.text, "x");
  EXPECT_EQ(r.finish_reason, "length");
  EXPECT_EQ(r.usage.total_tokens, 9);
  EXPECT_THROW(HttpLlmClient::parse_response("{}"), ApiError);
  EXPECT_THROW(HttpLlmClient::parse_response("oops"), ApiError);
}

TEST(Http, RetriesTransientFailures) {
  FakeEndpoint ep({503, 429, 200});
  HttpLlmClient client(ep.config(3));
  const auto r = client.chat(hello_request());
  EXPECT_EQ(r.text, "hello");
  EXPECT_EQ(r.usage.total_tokens, 4);
  EXPECT_EQ(ep.hits(), 3);
  EXPECT_EQ(json::parse(ep.last_body())["model"], "test-model");
  EXPECT_EQ(ep.last_auth(), "");
}

TEST(Http, ExhaustedRetriesAreTransportErrors) {
  FakeEndpoint ep({500});
  HttpLlmClient client(ep.config(2));
  EXPECT_THROW(client.chat(hello_request()), TransportError);
  EXPECT_EQ(ep.hits(), 3);
}

TEST(Http, TerminalStatusIsApiError) {
  FakeEndpoint ep({400});
  HttpLlmClient client(ep.config(5));
  try {
    client.chat(hello_request());
    FAIL() << "expected ApiError";
  } catch (const ApiError& e) {
    EXPECT_EQ(e.status(), 400);
    EXPECT_NE(std::string(e.what()).find("status 400"), std::string::npos);
  }
  EXPECT_EQ(ep.hits(), 1);
}

TEST(Http, TimeoutIsTransportError) {
  FakeEndpoint ep({200}, 1500);
  HttpLlmClient client(ep.config(0, 0.2));
  EXPECT_THROW(client.chat(hello_request()), TransportError);
}

TEST(Http, CredentialFromEnvironment) {
  FakeEndpoint ep({200});
  HttpClientConfig c = ep.config(0);
  c.api_key_env = "ELEMENTAL_TEST_KEY";
  ::unsetenv("ELEMENTAL_TEST_KEY");
  EXPECT_THROW(HttpLlmClient{c}, ConfigurationError);
  ::setenv("ELEMENTAL_TEST_KEY", "sekrit", 1);
  HttpLlmClient client(c);
  client.chat(hello_request());
  EXPECT_EQ(ep.last_auth(), "Bearer sekrit");
  ::unsetenv("ELEMENTAL_TEST_KEY");
  HttpClientConfig bad = c;
  bad.endpoint = "no-scheme";
  EXPECT_THROW(HttpLlmClient{bad}, ConfigurationError);
}

// Opt-in: set ELEMENTAL_LIVE_ENDPOINT (and the key variable) to run.
TEST(Http, LiveEndpointSmoke) {
  const char* endpoint = std::getenv("ELEMENTAL_LIVE_ENDPOINT");
  if (endpoint == nullptr || *endpoint == '\0') GTEST_SKIP() << "ELEMENTAL_LIVE_ENDPOINT not set";
  HttpClientConfig c;
  c.endpoint = endpoint;
  if (const char* key_env = std::getenv("ELEMENTAL_LIVE_KEY_ENV")) c.api_key_env = key_env;
  LlmRequest r = hello_request();
  if (const char* model = std::getenv("ELEMENTAL_LIVE_MODEL")) r.model = model;
  r.max_tokens = 16;
  EXPECT_FALSE(HttpLlmClient(c).chat(r).text.empty());
}
