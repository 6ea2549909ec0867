#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace bayescoh {

// A single scoring request: how likely is `continuation` as the next tokens
// after `context`, with per-token distributions rescaled to `temperature`.
struct ScoreRequest {
  std::string context;
  std::string continuation;
  double temperature = 1.0;
  bool operator==(const ScoreRequest&) const = default;
};

// Per-token log-probabilities for one scored continuation. `cumulative` is
// always the sum of `token_logprobs`.
struct ScoreResult {
  std::vector<std::string> tokens;
  std::vector<double> token_logprobs;
  double cumulative = 0.0;
};

// Validates the pairing invariants (non-empty, equal lengths, no token
// log-probability above 0) and fills in the cumulative sum. Throws
// ProtocolError on violation.
ScoreResult make_score_result(std::vector<std::string> tokens, std::vector<double> logprobs);

// Throws std::invalid_argument for an empty continuation or a temperature
// that is not a positive finite number.
void check_request(const ScoreRequest& request);

// JSON form used on the wire and in the cache:
// {"tokens": [...], "token_logprobs": [...]}
nlohmann::ordered_json score_result_to_json(const ScoreResult& result);
ScoreResult score_result_from_json(const nlohmann::json& doc);

// Abstract scorer. Implementations must be safe to call from multiple
// threads concurrently.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  // Stable identifier covering everything that affects scores; used as part
  // of cache keys.
  virtual std::string id() const = 0;

  // Whether the backend can rescale its per-token distributions for
  // temperatures other than 1.
  virtual bool supports_temperature_scaling() const = 0;

  virtual ScoreResult score(const ScoreRequest& request) const = 0;
};

using BackendPtr = std::shared_ptr<const ModelBackend>;

// --- uniform model -----------------------------------------------------------

// Maximum-entropy reference: every token costs -ln(vocab_size) regardless of
// context. Uniform distributions are fixed points of temperature rescaling,
// so the same holds at every temperature. Continuations are split with
// whitespace_tokens().
class UniformBackend : public ModelBackend {
 public:
  explicit UniformBackend(std::size_t vocab_size);

  std::string id() const override;
  bool supports_temperature_scaling() const override { return true; }
  ScoreResult score(const ScoreRequest& request) const override;

  std::size_t vocab_size() const { return vocab_size_; }

 private:
  std::size_t vocab_size_;
  double token_logprob_;
};

// --- tabular worlds ----------------------------------------------------------

// A small discrete joint distribution with analytically known posteriors:
// P(class) and P(evidence | class). Likelihood rows may sum to less than 1
// per class; the remainder is an implicit "other evidence" sink that absorbs
// the leftover mass.
struct TabularWorld {
  std::vector<std::string> classes;
  std::vector<std::string> evidences;
  std::vector<double> prior;                    // indexed by class
  std::vector<std::vector<double>> likelihood;  // [evidence][class]
};

// Throws ConstructionError unless: at least 2 classes and 1 evidence, all
// symbols unique (across both lists) and non-empty, prior strictly positive
// and summing to 1, every likelihood strictly positive with per-class totals
// at most 1.
void check_world(const TabularWorld& world);

// JSON form: {"classes": [...], "evidences": [...], "prior": {class: p},
// "likelihood": {evidence: {class: p}}, "binding": {text: symbol}?}.
TabularWorld world_from_json(const nlohmann::json& doc);
std::map<std::string, std::string> binding_from_json(const nlohmann::json& doc);

// Deterministic recognition of scoring requests against a world. The binding
// maps dataset strings onto world symbols; by default every symbol binds to
// itself. Given a request:
//   - continuation bound to a class, no bound evidence in the context
//       -> prior over classes
//   - continuation bound to a class, a bound evidence present in the context
//       -> posterior given that evidence (rightmost occurrence wins)
//   - continuation bound to an evidence, a bound class present in the
//       context -> likelihood row of the rightmost class occurrence
// Anything else raises BindingError. Occurrences are compared by end offset,
// ties broken towards the longer match, so a symbol that is a suffix of
// another resolves to the enclosing one.
class WorldModel {
 public:
  WorldModel(TabularWorld world, std::map<std::string, std::string> binding = {});

  struct Query {
    enum class Kind { Prior, Likelihood, Posterior } kind;
    std::size_t class_index;     // scored class (prior/posterior) or
                                 // conditioning class (likelihood)
    std::size_t evidence_index;  // scored evidence (likelihood) or context
                                 // evidence (posterior); unused for priors
  };

  Query resolve(const ScoreRequest& request) const;

  // Log-probabilities under the temperature-rescaled distributions
  // p^(1/tau) / Z, each normalized over its own support. At tau == 1 the
  // prior and likelihood return the stored log-probabilities untouched.
  double prior_logprob(std::size_t class_index, double temperature) const;
  double likelihood_logprob(std::size_t evidence_index, std::size_t class_index,
                            double temperature) const;

  // Posterior over classes whose log-weights are
  //   log prior + gradient * log likelihood + shift[class]
  // normalized at the given temperature. gradient == 1 with zero shifts is
  // the exact Bayes posterior.
  double weighted_posterior_logprob(std::size_t class_index, std::size_t evidence_index,
                                    double temperature, double gradient = 1.0,
                                    const std::vector<double>* shifts = nullptr) const;

  const TabularWorld& world() const { return world_; }
  std::string content_fingerprint() const;  // hash of world + binding

 private:
  struct Occurrence {
    std::size_t symbol_index = 0;
    std::size_t end = 0;
    std::size_t length = 0;
  };
  std::optional<Occurrence> rightmost(const std::string& context,
                                      const std::vector<std::string>& symbols) const;

  TabularWorld world_;
  std::map<std::string, std::string> binding_;  // text -> symbol
  std::map<std::string, std::size_t> class_by_symbol_;
  std::map<std::string, std::size_t> evidence_by_symbol_;
  std::vector<std::string> class_texts_;     // bound texts recognized in contexts
  std::vector<std::string> evidence_texts_;  // same, for evidences
  std::vector<std::size_t> class_text_index_;
  std::vector<std::size_t> evidence_text_index_;
  std::vector<double> log_prior_;
  std::vector<std::vector<double>> log_likelihood_;  // [evidence][class]
};

// --- synthetic backends --------------------------------------------------------

// Scores requests with the exact probabilities of a tabular world: priors,
// likelihood rows, and Bayes posteriors, each rescaled per temperature. The
// whole continuation is treated as a single token.
class TabularOracleBackend : public ModelBackend {
 public:
  explicit TabularOracleBackend(TabularWorld world,
                                std::map<std::string, std::string> binding = {});

  std::string id() const override;
  bool supports_temperature_scaling() const override { return true; }
  ScoreResult score(const ScoreRequest& request) const override;

  const WorldModel& model() const { return model_; }

 private:
  WorldModel model_;
  std::string id_;
};

// Same world and priors/likelihoods as the oracle, but posteriors update
// too little and too noisily: the posterior log-weight of class c is
//   log prior(c) + gradient * log likelihood(e | c) + eta(c)
// where eta is a deterministic pseudo-random N(0, noise_sd^2 / 2) draw keyed
// by (seed, full posterior context, class symbol). gradient == 1 and
// noise_sd == 0 reproduce the oracle bit for bit.
class NoisyUnderupdaterBackend : public ModelBackend {
 public:
  NoisyUnderupdaterBackend(TabularWorld world, double gradient, double noise_sd,
                           std::uint64_t seed, std::map<std::string, std::string> binding = {});

  std::string id() const override;
  bool supports_temperature_scaling() const override { return true; }
  ScoreResult score(const ScoreRequest& request) const override;

  double gradient() const { return gradient_; }
  double noise_sd() const { return noise_sd_; }

 private:
  WorldModel model_;
  double gradient_;
  double noise_sd_;
  std::uint64_t seed_;
  std::string id_;
};

// Loads {"classes", "evidences", "prior", "likelihood", "binding"?} from a
// JSON file. Returns the world plus the binding (empty map = identity).
std::pair<TabularWorld, std::map<std::string, std::string>> load_world(
    const std::filesystem::path& path);

}  // namespace bayescoh
