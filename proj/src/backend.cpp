#include "bayescoh/backend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "bayescoh/errors.hpp"
#include "bayescoh/util.hpp"

namespace bayescoh {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

double logsumexp(const std::vector<double>& values) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values) m = std::max(m, v);
  if (std::isinf(m)) return m;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - m);
  return m + std::log(sum);
}

// Standard normal draw that is a pure function of its key: FNV-1a seeds a
// SplitMix64 stream, Box-Muller turns two uniforms into a Gaussian.
double keyed_gaussian(std::uint64_t seed, std::string_view context, std::string_view symbol) {
  std::string key;
  key.reserve(symbol.size() + 1 + context.size());
  key.append(symbol);
  key.push_back('\x1f');
  key.append(context);
  std::uint64_t h = fnv1a64(key, 0xCBF29CE484222325ULL ^ (seed * 0x9E3779B97F4A7C15ULL));
  SplitMix64 rng(h);
  double u1 = rng.uniform();
  while (u1 <= 0.0) u1 = rng.uniform();
  double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

ordered_json world_to_canonical_json(const TabularWorld& world,
                                     const std::map<std::string, std::string>& binding) {
  ordered_json doc;
  doc["classes"] = world.classes;
  doc["evidences"] = world.evidences;
  doc["prior"] = world.prior;
  doc["likelihood"] = world.likelihood;
  ordered_json bind = ordered_json::object();
  for (const auto& [text, symbol] : binding) bind[text] = symbol;
  doc["binding"] = std::move(bind);
  return doc;
}

double require_probability(const json& value, const std::string& what) {
  if (!value.is_number()) throw ConstructionError(what + " must be a number");
  double p = value.get<double>();
  if (!(p > 0.0 && p <= 1.0)) {
    throw ConstructionError(what + " must lie in (0, 1], got " + format_double(p));
  }
  return p;
}

std::vector<std::string> require_string_array(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_array()) {
    throw ConstructionError(std::string("world: \"") + key + "\" must be an array of strings");
  }
  std::vector<std::string> out;
  for (const auto& item : *it) {
    if (!item.is_string()) {
      throw ConstructionError(std::string("world: \"") + key + "\" must be an array of strings");
    }
    out.push_back(item.get<std::string>());
  }
  return out;
}

}  // namespace

ScoreResult make_score_result(std::vector<std::string> tokens, std::vector<double> logprobs) {
  if (tokens.empty()) throw ProtocolError("score result has no tokens");
  if (tokens.size() != logprobs.size()) {
    throw ProtocolError("score result has " + std::to_string(tokens.size()) + " tokens but " +
                        std::to_string(logprobs.size()) + " log-probabilities");
  }
  double cumulative = 0.0;
  for (double lp : logprobs) {
    if (std::isnan(lp) || lp > 0.0) {
      throw ProtocolError("token log-probability " + format_double(lp) + " is not a valid log of a probability");
    }
    cumulative += lp;
  }
  ScoreResult result;
  result.tokens = std::move(tokens);
  result.token_logprobs = std::move(logprobs);
  result.cumulative = cumulative;
  return result;
}

void check_request(const ScoreRequest& request) {
  if (request.continuation.empty()) {
    throw std::invalid_argument("continuation must not be empty");
  }
  if (!(request.temperature > 0.0) || !std::isfinite(request.temperature)) {
    throw std::invalid_argument("temperature must be a positive finite number, got " +
                                format_double(request.temperature));
  }
}

nlohmann::ordered_json score_result_to_json(const ScoreResult& result) {
  ordered_json doc;
  doc["tokens"] = result.tokens;
  doc["token_logprobs"] = result.token_logprobs;
  return doc;
}

ScoreResult score_result_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ProtocolError("score payload must be a JSON object");
  auto tokens_it = doc.find("tokens");
  auto logprobs_it = doc.find("token_logprobs");
  if (tokens_it == doc.end() || !tokens_it->is_array()) {
    throw ProtocolError("score payload is missing a \"tokens\" array");
  }
  if (logprobs_it == doc.end() || !logprobs_it->is_array()) {
    throw ProtocolError("score payload is missing a \"token_logprobs\" array");
  }
  std::vector<std::string> tokens;
  for (const auto& t : *tokens_it) {
    if (!t.is_string()) throw ProtocolError("\"tokens\" entries must be strings");
    tokens.push_back(t.get<std::string>());
  }
  std::vector<double> logprobs;
  for (const auto& lp : *logprobs_it) {
    if (!lp.is_number()) throw ProtocolError("\"token_logprobs\" entries must be numbers");
    logprobs.push_back(lp.get<double>());
  }
  return make_score_result(std::move(tokens), std::move(logprobs));
}

// --- uniform ---------------------------------------------------------------

UniformBackend::UniformBackend(std::size_t vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size < 2) {
    throw ConstructionError("uniform backend needs a vocabulary of at least 2 tokens");
  }
  token_logprob_ = -std::log(static_cast<double>(vocab_size));
}

std::string UniformBackend::id() const {
  return "uniform:" + std::to_string(vocab_size_);
}

ScoreResult UniformBackend::score(const ScoreRequest& request) const {
  check_request(request);
  std::vector<std::string> tokens = whitespace_tokens(request.continuation);
  // A uniform distribution is its own image under p^(1/tau)/Z, so the
  // temperature never enters.
  std::vector<double> logprobs(tokens.size(), token_logprob_);
  return make_score_result(std::move(tokens), std::move(logprobs));
}

// --- tabular worlds ----------------------------------------------------------

void check_world(const TabularWorld& world) {
  if (world.classes.size() < 2) {
    throw ConstructionError("world needs at least 2 classes, got " +
                            std::to_string(world.classes.size()));
  }
  if (world.evidences.empty()) {
    throw ConstructionError("world needs at least 1 evidence");
  }
  std::set<std::string> symbols;
  for (const auto& name : world.classes) {
    if (name.empty()) throw ConstructionError("world: empty class symbol");
    if (!symbols.insert(name).second) {
      throw ConstructionError("world: duplicate symbol \"" + name + "\"");
    }
  }
  for (const auto& name : world.evidences) {
    if (name.empty()) throw ConstructionError("world: empty evidence symbol");
    if (!symbols.insert(name).second) {
      throw ConstructionError("world: duplicate symbol \"" + name + "\"");
    }
  }
  if (world.prior.size() != world.classes.size()) {
    throw ConstructionError("world: prior must have one entry per class");
  }
  double prior_sum = 0.0;
  for (std::size_t c = 0; c < world.prior.size(); ++c) {
    if (!(world.prior[c] > 0.0)) {
      throw ConstructionError("world: prior of \"" + world.classes[c] +
                              "\" must be strictly positive");
    }
    prior_sum += world.prior[c];
  }
  if (std::fabs(prior_sum - 1.0) > 1e-9) {
    throw ConstructionError("world: prior sums to " + format_double(prior_sum) + ", expected 1");
  }
  if (world.likelihood.size() != world.evidences.size()) {
    throw ConstructionError("world: likelihood must have one row per evidence");
  }
  for (std::size_t e = 0; e < world.likelihood.size(); ++e) {
    if (world.likelihood[e].size() != world.classes.size()) {
      throw ConstructionError("world: likelihood row for \"" + world.evidences[e] +
                              "\" must have one entry per class");
    }
    for (std::size_t c = 0; c < world.classes.size(); ++c) {
      if (!(world.likelihood[e][c] > 0.0)) {
        throw ConstructionError("world: likelihood of \"" + world.evidences[e] + "\" given \"" +
                                world.classes[c] + "\" must be strictly positive");
      }
    }
  }
  for (std::size_t c = 0; c < world.classes.size(); ++c) {
    double column = 0.0;
    for (std::size_t e = 0; e < world.evidences.size(); ++e) column += world.likelihood[e][c];
    if (column > 1.0 + 1e-9) {
      throw ConstructionError("world: likelihoods given \"" + world.classes[c] + "\" sum to " +
                              format_double(column) + ", more than 1");
    }
  }
}

TabularWorld world_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConstructionError("world: top-level value must be an object");
  TabularWorld world;
  world.classes = require_string_array(doc, "classes");
  world.evidences = require_string_array(doc, "evidences");

  auto prior_it = doc.find("prior");
  if (prior_it == doc.end()) throw ConstructionError("world: missing \"prior\"");
  if (prior_it->is_object()) {
    for (const auto& name : world.classes) {
      auto it = prior_it->find(name);
      if (it == prior_it->end()) {
        throw ConstructionError("world: prior is missing class \"" + name + "\"");
      }
      world.prior.push_back(require_probability(*it, "world: prior of \"" + name + "\""));
    }
  } else if (prior_it->is_array()) {
    for (std::size_t c = 0; c < prior_it->size(); ++c) {
      world.prior.push_back(
          require_probability((*prior_it)[c], "world: prior entry " + std::to_string(c)));
    }
  } else {
    throw ConstructionError("world: \"prior\" must be an object or array");
  }

  auto lik_it = doc.find("likelihood");
  if (lik_it == doc.end() || !lik_it->is_object()) {
    throw ConstructionError("world: \"likelihood\" must be an object keyed by evidence");
  }
  for (const auto& evidence : world.evidences) {
    auto row_it = lik_it->find(evidence);
    if (row_it == lik_it->end() || !row_it->is_object()) {
      throw ConstructionError("world: likelihood is missing evidence \"" + evidence + "\"");
    }
    std::vector<double> row;
    for (const auto& name : world.classes) {
      auto cell = row_it->find(name);
      if (cell == row_it->end()) {
        throw ConstructionError("world: likelihood of \"" + evidence +
                                "\" is missing class \"" + name + "\"");
      }
      row.push_back(require_probability(
          *cell, "world: likelihood of \"" + evidence + "\" given \"" + name + "\""));
    }
    world.likelihood.push_back(std::move(row));
  }
  return world;
}

std::map<std::string, std::string> binding_from_json(const nlohmann::json& doc) {
  std::map<std::string, std::string> binding;
  auto it = doc.find("binding");
  if (it == doc.end()) return binding;
  if (!it->is_object()) throw ConstructionError("world: \"binding\" must be an object");
  for (const auto& [text, symbol] : it->items()) {
    if (!symbol.is_string()) {
      throw ConstructionError("world: binding values must be symbol strings");
    }
    binding[text] = symbol.get<std::string>();
  }
  return binding;
}

std::pair<TabularWorld, std::map<std::string, std::string>> load_world(
    const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  TabularWorld world = world_from_json(doc);
  check_world(world);
  return {std::move(world), binding_from_json(doc)};
}

WorldModel::WorldModel(TabularWorld world, std::map<std::string, std::string> binding)
    : world_(std::move(world)), binding_(std::move(binding)) {
  check_world(world_);
  for (std::size_t c = 0; c < world_.classes.size(); ++c) class_by_symbol_[world_.classes[c]] = c;
  for (std::size_t e = 0; e < world_.evidences.size(); ++e) {
    evidence_by_symbol_[world_.evidences[e]] = e;
  }
  if (binding_.empty()) {
    for (const auto& name : world_.classes) binding_[name] = name;
    for (const auto& name : world_.evidences) binding_[name] = name;
  }
  for (const auto& [text, symbol] : binding_) {
    if (text.empty()) throw ConstructionError("binding: bound text must not be empty");
    if (auto it = class_by_symbol_.find(symbol); it != class_by_symbol_.end()) {
      class_texts_.push_back(text);
      class_text_index_.push_back(it->second);
    } else if (auto jt = evidence_by_symbol_.find(symbol); jt != evidence_by_symbol_.end()) {
      evidence_texts_.push_back(text);
      evidence_text_index_.push_back(jt->second);
    } else {
      throw ConstructionError("binding: \"" + text + "\" maps to unknown symbol \"" + symbol +
                              "\"");
    }
  }
  log_prior_.reserve(world_.prior.size());
  for (double p : world_.prior) log_prior_.push_back(std::log(p));
  log_likelihood_.reserve(world_.likelihood.size());
  for (const auto& row : world_.likelihood) {
    std::vector<double> log_row;
    log_row.reserve(row.size());
    for (double p : row) log_row.push_back(std::log(p));
    log_likelihood_.push_back(std::move(log_row));
  }
}

std::optional<WorldModel::Occurrence> WorldModel::rightmost(
    const std::string& context, const std::vector<std::string>& texts) const {
  std::optional<Occurrence> best;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::size_t pos = context.rfind(texts[i]);
    if (pos == std::string::npos) continue;
    Occurrence occ{i, pos + texts[i].size(), texts[i].size()};
    if (!best || occ.end > best->end || (occ.end == best->end && occ.length > best->length)) {
      best = occ;
    }
  }
  return best;
}

WorldModel::Query WorldModel::resolve(const ScoreRequest& request) const {
  check_request(request);
  auto binding_it = binding_.find(request.continuation);
  if (binding_it == binding_.end()) {
    throw BindingError("continuation \"" + request.continuation +
                       "\" is not bound to any world symbol");
  }
  const std::string& symbol = binding_it->second;
  if (auto it = class_by_symbol_.find(symbol); it != class_by_symbol_.end()) {
    // Scoring a class: posterior when some bound evidence occurs in the
    // context, prior otherwise.
    if (auto occ = rightmost(request.context, evidence_texts_)) {
      return Query{Query::Kind::Posterior, it->second, evidence_text_index_[occ->symbol_index]};
    }
    return Query{Query::Kind::Prior, it->second, 0};
  }
  auto ev_it = evidence_by_symbol_.find(symbol);
  // The binding was validated at construction, so the symbol must be an
  // evidence here.
  auto occ = rightmost(request.context, class_texts_);
  if (!occ) {
    throw BindingError("context provides no conditioning class for evidence \"" +
                       request.continuation + "\"");
  }
  return Query{Query::Kind::Likelihood, class_text_index_[occ->symbol_index], ev_it->second};
}

double WorldModel::prior_logprob(std::size_t class_index, double temperature) const {
  if (temperature == 1.0) return log_prior_[class_index];
  std::vector<double> scaled;
  scaled.reserve(log_prior_.size());
  for (double lp : log_prior_) scaled.push_back(lp / temperature);
  return log_prior_[class_index] / temperature - logsumexp(scaled);
}

double WorldModel::likelihood_logprob(std::size_t evidence_index, std::size_t class_index,
                                      double temperature) const {
  if (temperature == 1.0) return log_likelihood_[evidence_index][class_index];
  // The per-class distribution over evidence spans the listed evidences plus
  // an implicit sink holding whatever mass the rows leave unclaimed.
  std::vector<double> scaled;
  scaled.reserve(world_.evidences.size() + 1);
  double column = 0.0;
  for (std::size_t e = 0; e < world_.evidences.size(); ++e) {
    scaled.push_back(log_likelihood_[e][class_index] / temperature);
    column += world_.likelihood[e][class_index];
  }
  double sink = 1.0 - column;
  if (sink > 0.0) scaled.push_back(std::log(sink) / temperature);
  return log_likelihood_[evidence_index][class_index] / temperature - logsumexp(scaled);
}

double WorldModel::weighted_posterior_logprob(std::size_t class_index, std::size_t evidence_index,
                                              double temperature, double gradient,
                                              const std::vector<double>* shifts) const {
  std::vector<double> weights;
  weights.reserve(world_.classes.size());
  for (std::size_t c = 0; c < world_.classes.size(); ++c) {
    double w = log_prior_[c] + gradient * log_likelihood_[evidence_index][c];
    if (shifts) w += (*shifts)[c];
    weights.push_back(w / temperature);
  }
  return weights[class_index] - logsumexp(weights);
}

std::string WorldModel::content_fingerprint() const {
  return sha256_hex(world_to_canonical_json(world_, binding_).dump()).substr(0, 12);
}

// --- oracle ------------------------------------------------------------------

TabularOracleBackend::TabularOracleBackend(TabularWorld world,
                                           std::map<std::string, std::string> binding)
    : model_(std::move(world), std::move(binding)) {
  id_ = "oracle:" + model_.content_fingerprint();
}

std::string TabularOracleBackend::id() const { return id_; }

ScoreResult TabularOracleBackend::score(const ScoreRequest& request) const {
  WorldModel::Query query = model_.resolve(request);
  double logprob = 0.0;
  switch (query.kind) {
    case WorldModel::Query::Kind::Prior:
      logprob = model_.prior_logprob(query.class_index, request.temperature);
      break;
    case WorldModel::Query::Kind::Likelihood:
      logprob = model_.likelihood_logprob(query.evidence_index, query.class_index,
                                          request.temperature);
      break;
    case WorldModel::Query::Kind::Posterior:
      logprob = model_.weighted_posterior_logprob(query.class_index, query.evidence_index,
                                                  request.temperature);
      break;
  }
  return make_score_result({request.continuation}, {logprob});
}

// --- noisy underupdater --------------------------------------------------------

NoisyUnderupdaterBackend::NoisyUnderupdaterBackend(TabularWorld world, double gradient,
                                                   double noise_sd, std::uint64_t seed,
                                                   std::map<std::string, std::string> binding)
    : model_(std::move(world), std::move(binding)),
      gradient_(gradient),
      noise_sd_(noise_sd),
      seed_(seed) {
  if (!(gradient > 0.0 && gradient <= 1.0)) {
    throw ConstructionError("update gradient must lie in (0, 1], got " + format_double(gradient));
  }
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) {
    throw ConstructionError("noise standard deviation must be finite and nonnegative, got " +
                            format_double(noise_sd));
  }
  std::ostringstream id;
  id << "noisy:" << model_.content_fingerprint() << ":g=" << format_double(gradient_)
     << ",sd=" << format_double(noise_sd_) << ",seed=" << seed_;
  id_ = id.str();
}

std::string NoisyUnderupdaterBackend::id() const { return id_; }

ScoreResult NoisyUnderupdaterBackend::score(const ScoreRequest& request) const {
  WorldModel::Query query = model_.resolve(request);
  double logprob = 0.0;
  switch (query.kind) {
    case WorldModel::Query::Kind::Prior:
      logprob = model_.prior_logprob(query.class_index, request.temperature);
      break;
    case WorldModel::Query::Kind::Likelihood:
      logprob = model_.likelihood_logprob(query.evidence_index, query.class_index,
                                          request.temperature);
      break;
    case WorldModel::Query::Kind::Posterior: {
      if (noise_sd_ > 0.0) {
        // Each class picks up its own perturbation, deterministic in the
        // full posterior context. Dividing the variance by 2 makes the
        // *difference* of two class log-weights carry variance noise_sd^2.
        std::vector<double> shifts;
        shifts.reserve(model_.world().classes.size());
        double scale = noise_sd_ / std::sqrt(2.0);
        for (const auto& symbol : model_.world().classes) {
          shifts.push_back(scale * keyed_gaussian(seed_, request.context, symbol));
        }
        logprob = model_.weighted_posterior_logprob(query.class_index, query.evidence_index,
                                                    request.temperature, gradient_, &shifts);
      } else {
        logprob = model_.weighted_posterior_logprob(query.class_index, query.evidence_index,
                                                    request.temperature, gradient_);
      }
      break;
    }
  }
  return make_score_result({request.continuation}, {logprob});
}

}  // namespace bayescoh
