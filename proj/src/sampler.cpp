#include "dualuv/sampler.hpp"

#include "dualuv/error.hpp"
#include "dualuv/random.hpp"

#include <nlohmann/json.hpp>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

namespace dualuv {

using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kTail =
    "The person {action}, in a waist-up, standing, fixed-camera shot with arms and hands "
    "visible; lighting remains stable and physically plausible.";

// A clause is dropped when its owner factor draws the sentinel. An empty
// owner means the clause is always rendered.
struct Clause {
  std::string owner;
  std::string text;
};

const std::vector<Clause>& clauses(Regime regime) {
  static const std::vector<Clause> outfit = {
      {"", "{time_of_day}, {lighting}, {shot_size}, center composition. "},
      {"", "{A} {age} {gender_noun} from {region} wearing {a} {top_color} {top_fabric} {top}"},
      {"top_decoration", " featuring {top_decoration}"},
      {"outerwear", " paired with {a} {outer_color} {outerwear} {outerwear_detail}"},
      {"accessory", " and {accessory}"},
      {"", ", with {hair_color} {hairstyle}. "},
      {"", kTail},
  };
  static const std::vector<Clause> role = {
      {"", "{time_of_day}, {lighting}, {shot_size}, center composition. "},
      {"", "{A} {age} {gender_noun} {role} from {region}, wearing characteristic {role}-specific "
           "clothing and accessories, with {hair_color} {hairstyle}. "},
      {"", kTail},
  };
  return regime == Regime::kOutfit ? outfit : role;
}

// Placeholder names in order of first appearance; {A} and {a} are articles.
std::vector<std::string> placeholders(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string::npos) {
    const std::size_t end = text.find('}', pos);
    std::string name = text.substr(pos + 1, end - pos - 1);
    if (name != "A" && name != "a") out.push_back(std::move(name));
    pos = end + 1;
  }
  return out;
}

bool starts_with_vowel(const std::string& word) {
  if (word.empty()) return false;
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(word[0])));
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

// Fills placeholders left to right. An article takes its form from the
// value of the placeholder that follows it.
std::string fill(const std::string& text, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  bool pending_article = false;
  bool article_upper = false;
  std::size_t article_at = 0;
  while (pos < text.size()) {
    if (text[pos] != '{') {
      out += text[pos++];
      continue;
    }
    const std::size_t end = text.find('}', pos);
    const std::string name = text.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (name == "A" || name == "a") {
      pending_article = true;
      article_upper = name == "A";
      article_at = out.size();
      continue;
    }
    const std::string& v = values.at(name);
    if (pending_article) {
      std::string art = starts_with_vowel(v) ? "an" : "a";
      if (article_upper) art[0] = 'A';
      out.insert(article_at, art);
      pending_article = false;
    }
    out += v;
  }
  return out;
}

std::string to_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

FactorVocabulary parse_vocab(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("vocab: ") + e.what());
  }
  if (!j.is_object()) throw IoError("vocab: top level must be an object");

  auto read_items = [](const std::string& name, const nlohmann::json& arr) {
    if (!arr.is_array()) throw IoError("vocab: " + name + " items must be an array");
    std::vector<std::string> items;
    std::set<std::string> seen;
    for (const auto& v : arr) {
      if (!v.is_string()) throw IoError("vocab: " + name + " has a non-string item");
      const std::string s = v.get<std::string>();
      if (s.empty()) throw Error("vocab: " + name + " has an empty item");
      if (to_lower(s) == "none") throw Error("vocab: " + name + " lists None; use the sentinel flag");
      if (!seen.insert(s).second) throw Error("vocab: duplicate item '" + s + "' in " + name);
      items.push_back(s);
    }
    return items;
  };

  FactorVocabulary vocab;
  for (const auto& [name, value] : j.items()) {
    if (name == "negative") {
      vocab.negatives = read_items(name, value);
      continue;
    }
    Factor f;
    if (value.is_array()) {
      f.items = read_items(name, value);
    } else if (value.is_object()) {
      f.items = read_items(name, value.value("items", nlohmann::json::array()));
      const auto it = value.find("sentinel");
      if (it != value.end()) {
        if (!it->is_boolean()) throw IoError("vocab: " + name + " sentinel must be a boolean");
        f.sentinel = it->get<bool>();
      }
    } else {
      throw IoError("vocab: factor " + name + " must be an array or object");
    }
    if (f.items.empty() && !f.sentinel) throw Error("vocab: factor " + name + " is empty");
    vocab.factors.emplace(name, std::move(f));
  }
  return vocab;
}

FactorVocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_vocab(ss.str());
}

std::string vocab_to_json(const FactorVocabulary& vocab) {
  ojson j = ojson::object();
  for (const auto& [name, f] : vocab.factors) {
    if (f.sentinel) {
      j[name] = {{"items", f.items}, {"sentinel", true}};
    } else {
      j[name] = f.items;
    }
  }
  if (!vocab.negatives.empty()) j["negative"] = vocab.negatives;
  return j.dump(2) + "\n";
}

void save_vocab(const FactorVocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << vocab_to_json(vocab);
  if (!out) throw IoError("write failed: " + path.string());
}

std::uint64_t FactorVocabulary::hash() const { return hash_name(vocab_to_json(*this)); }

Regime regime_from_string(const std::string& s) {
  if (s == "outfit") return Regime::kOutfit;
  if (s == "role") return Regime::kRole;
  throw Error("unknown regime '" + s + "' (expected outfit or role)");
}

std::string to_string(Regime r) { return r == Regime::kOutfit ? "outfit" : "role"; }

std::vector<std::string> regime_factors(Regime regime) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const Clause& c : clauses(regime)) {
    for (auto& name : placeholders(c.text)) {
      if (seen.insert(name).second) out.push_back(name);
    }
  }
  return out;
}

std::size_t draw_factor(const Factor& factor, const std::string& name, std::uint64_t seed) {
  Rng rng(stream_seed(seed, "factor:" + name));
  return static_cast<std::size_t>(rng.below(factor.outcomes()));
}

ComposedScene sample_scene(const FactorVocabulary& vocab, Regime regime, std::uint64_t seed,
                           int negative_terms) {
  for (const auto& name : regime_factors(regime)) {
    if (!vocab.factors.count(name)) throw Error("vocab lacks factor '" + name + "'");
  }

  std::map<std::string, std::optional<std::string>> drawn;
  for (const auto& name : regime_factors(regime)) {
    const Factor& f = vocab.factors.at(name);
    const std::size_t idx = draw_factor(f, name, seed);
    drawn[name] = idx < f.items.size() ? std::optional<std::string>(f.items[idx]) : std::nullopt;
  }

  ComposedScene scene;
  scene.regime = regime;
  scene.seed = seed;
  scene.vocab_hash = vocab.hash();

  std::set<std::string> recorded;
  for (const Clause& c : clauses(regime)) {
    const auto names = placeholders(c.text);
    if (!c.owner.empty() && !drawn.at(c.owner)) {
      if (recorded.insert(c.owner).second) scene.assignment.emplace_back(c.owner, std::nullopt);
      continue;
    }
    std::map<std::string, std::string> values;
    for (const auto& name : names) {
      const auto& v = drawn.at(name);
      if (!v) throw Error("factor '" + name + "' drew None outside an optional clause");
      values[name] = *v;
      if (recorded.insert(name).second) scene.assignment.emplace_back(name, v);
    }
    scene.prompt += fill(c.text, values);
  }
  if (negative_terms > 0) scene.negative = compose_negative(vocab, seed, negative_terms);
  return scene;
}

std::string compose_negative(const FactorVocabulary& vocab, std::uint64_t seed, int k) {
  if (k < 0) throw Error("negative term count must be non-negative");
  const auto n = vocab.negatives.size();
  if (static_cast<std::size_t>(k) > n) {
    throw Error("requested " + std::to_string(k) + " negative terms, list has " +
                std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(stream_seed(seed, "negative"));
  std::string out;
  for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
    if (i) out += ", ";
    out += vocab.negatives[order[i]];
  }
  return out;
}

std::string ComposedScene::to_json_line() const {
  ojson j;
  j["regime"] = to_string(regime);
  j["seed"] = seed;
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(vocab_hash));
  j["vocab_hash"] = hex;
  ojson a = ojson::object();
  for (const auto& [name, v] : assignment) a[name] = v ? ojson(*v) : ojson(nullptr);
  j["assignment"] = a;
  j["prompt"] = prompt;
  j["negative"] = negative;
  return j.dump();
}

// ---------------------------------------------------------------------------

RefineResult refine_external(const std::string& prompt, const std::string& command) {
  RefineResult r;
  r.original = prompt;
  r.text = prompt;
  if (command.empty()) {
    r.note = "no command";
    return r;
  }

  int to_child[2];
  int from_child[2];
  if (pipe(to_child) != 0) {
    r.note = std::string("pipe: ") + std::strerror(errno);
    return r;
  }
  if (pipe(from_child) != 0) {
    r.note = std::string("pipe: ") + std::strerror(errno);
    close(to_child[0]);
    close(to_child[1]);
    return r;
  }

  const pid_t pid = fork();
  if (pid < 0) {
    r.note = std::string("fork: ") + std::strerror(errno);
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) close(fd);
    return r;
  }
  if (pid == 0) {
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) close(fd);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(to_child[0]);
  close(from_child[1]);

  // A command that ignores stdin may exit before we finish writing.
  auto* old_handler = std::signal(SIGPIPE, SIG_IGN);
  // Prompts are far below the pipe buffer, so writing before reading is safe.
  std::size_t written = 0;
  while (written < prompt.size()) {
    const ssize_t w = write(to_child[1], prompt.data() + written, prompt.size() - written);
    if (w < 0) {
      if (errno == EINTR) continue;
      break;
    }
    written += static_cast<std::size_t>(w);
  }
  close(to_child[1]);

  std::string out;
  char buf[4096];
  for (;;) {
    const ssize_t n = read(from_child[0], buf, sizeof(buf));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    out.append(buf, static_cast<std::size_t>(n));
  }
  close(from_child[0]);
  int status = 0;
  while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  std::signal(SIGPIPE, old_handler);

  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    r.note = WIFEXITED(status) ? "exit status " + std::to_string(WEXITSTATUS(status))
                               : std::string("terminated by signal");
    return r;
  }
  if (!out.empty() && out.back() == '\n') out.pop_back();
  r.text = out;
  r.refined = true;
  return r;
}

}  // namespace dualuv
