// Toy world used as a stand-in for a pre-training corpus and downstream
// classification datasets: short template sentences about four news topics,
// reviews with polar adjectives, and reliable/unreliable rumours.

#include <algorithm>
#include <array>
#include <functional>
#include <string>
#include <vector>

#include "uat/corpus.hpp"
#include "uat/error.hpp"
#include "uat/prompt.hpp"
#include "uat/rng.hpp"

namespace uat {

namespace {

using Words = std::vector<std::string>;

struct Topic {
  std::string name;
  Words nouns;
  Words verbs;
  Words objects;
};

const std::vector<Topic>& topics() {
  static const std::vector<Topic> kTopics = {
      {"business",
       {"market", "company", "bank", "investors", "economy", "firm", "retailer", "exporter"},
       {"reported", "raised", "cut", "doubled"},
       {"profits", "prices", "sales", "earnings"}},
      {"politics",
       {"government", "senate", "minister", "parliament", "president", "party", "council", "mayor"},
       {"passed", "debated", "approved", "blocked"},
       {"law", "bill", "budget", "reform"}},
      {"sports",
       {"team", "coach", "player", "league", "club", "striker", "captain", "champion"},
       {"won", "lost", "scored", "played"},
       {"match", "title", "game", "final"}},
      {"technology",
       {"software", "computer", "phone", "internet", "robot", "startup", "chipmaker", "network"},
       {"launched", "released", "upgraded", "tested"},
       {"update", "device", "app", "system"}},
  };
  return kTopics;
}

const Words kReviewSubjects = {"movie", "film", "acting", "story", "plot", "music", "ending", "show",
                               "book", "meal", "cast", "soundtrack"};
const Words kPositive = {"great", "excellent", "wonderful", "brilliant", "lovely", "enjoyable",
                         "superb", "charming"};
const Words kNegative = {"terrible", "awful", "boring", "horrible", "dull", "poor", "dreadful",
                         "clumsy"};
const Words kIntensifiers = {"very", "really", "quite", "truly", "so", "rather"};
const Words kTimes = {"today", "yesterday", "this week", "on monday", "last night", "this morning"};
const Words kReliableOpeners = {"officials confirmed that", "according to the report ,",
                                "the agency said that", "records show that"};
const Words kUnreliableOpeners = {"shocking !", "you will not believe it !", "they are hiding it !",
                                  "share before it is deleted !"};
const Words kNames = {"anna", "ben", "carla", "david", "emma", "felix", "grace", "henry", "iris", "jack",
                      "kate", "leo", "maria", "nina", "oscar", "paul", "rosa", "sam", "tina", "victor"};
const Words kChores = {"bought", "painted", "found", "carried", "cleaned", "moved", "lost", "borrowed",
                       "washed", "fixed", "dropped", "opened", "packed", "folded", "hid", "sold"};
const Words kColors = {"red", "blue", "green", "yellow", "white", "black", "brown", "grey", "orange", "pink"};
const Words kThings = {"chair", "lamp", "basket", "kettle", "blanket", "bicycle", "ladder", "bucket",
                       "umbrella", "teapot", "jacket", "pillow", "carpet", "bottle", "candle", "drawer",
                       "mirror", "shelf", "scarf", "spoon", "window", "door", "box", "cup"};
const Words kPlaces = {"kitchen", "garden", "garage", "attic", "hallway", "cellar", "yard", "bedroom",
                       "village", "harbor", "station", "bakery", "library", "square", "forest", "river"};
const Words kAnimals = {"cat", "dog", "horse", "goat", "duck", "rabbit", "sheep", "owl", "fox", "mouse"};
const Words kUnreliableTails = {"!", "! ! !", ", wake up !", ", everyone knows !"};

class ToyWorld {
 public:
  explicit ToyWorld(Rng& rng) : rng_(rng) {}

  const std::string& pick(const Words& words) {
    return words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng_)];
  }
  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  std::string topic_sentence(const Topic& t) {
    switch (below(4)) {
      case 0: return "the " + pick(t.nouns) + " " + pick(t.verbs) + " the " + pick(t.objects) + " " + pick(kTimes) + " .";
      case 1: return "the " + pick(t.nouns) + " " + pick(t.verbs) + " a new " + pick(t.objects) + " .";
      case 2: return "in " + t.name + " news , the " + pick(t.nouns) + " " + pick(t.verbs) + " the " + pick(t.objects) + " .";
      default: return "the " + pick(t.nouns) + " and the " + pick(t.nouns) + " " + pick(t.verbs) + " the " + pick(t.objects) + " .";
    }
  }

  std::string review_sentence(bool positive) {
    const Words& adj = positive ? kPositive : kNegative;
    switch (below(4)) {
      case 0: return "the " + pick(kReviewSubjects) + " was " + pick(kIntensifiers) + " " + pick(adj) + " .";
      case 1: return "i thought the " + pick(kReviewSubjects) + " was " + pick(adj) + " .";
      case 2: return "the " + pick(kReviewSubjects) + " is " + pick(adj) + " and the " + pick(kReviewSubjects) + " is " + pick(adj) + " .";
      default: return "what a " + pick(adj) + " " + pick(kReviewSubjects) + " !";
    }
  }

  std::string rumor_sentence(bool reliable) {
    const Topic& t = topics()[below(topics().size())];
    const std::string core = "the " + pick(t.nouns) + " " + pick(t.verbs) + " the " + pick(t.objects);
    if (reliable) return pick(kReliableOpeners) + " " + core + " " + pick(kTimes) + " .";
    return pick(kUnreliableOpeners) + " " + core + " " + pick(kUnreliableTails);
  }

  // Label-free filler about ordinary objects.
  std::string everyday_sentence() {
    switch (below(4)) {
      case 0: return pick(kNames) + " " + pick(kChores) + " a " + pick(kColors) + " " + pick(kThings) + " in the " + pick(kPlaces) + " .";
      case 1: return "the " + pick(kAnimals) + " slept near the " + pick(kColors) + " " + pick(kThings) + " .";
      case 2: return pick(kNames) + " and " + pick(kNames) + " walked to the " + pick(kPlaces) + " with a " + pick(kAnimals) + " .";
      default: return "there is a " + pick(kThings) + " behind the " + pick(kThings) + " in the " + pick(kPlaces) + " .";
    }
  }

  // Lines that tie the verbalizer words to their classes.
  std::string label_sentence() {
    switch (below(3)) {
      case 0: {
        const bool pos = below(2) == 0;
        return review_sentence(pos) + " it was " + (pos ? "good" : "bad") + " .";
      }
      case 1: {
        const Topic& t = topics()[below(topics().size())];
        return topic_sentence(t) + " this is " + t.name + " news .";
      }
      default: {
        const bool reliable = below(2) == 0;
        return rumor_sentence(reliable) + " it was " + (reliable ? "real" : "fake") + " .";
      }
    }
  }

 private:
  Rng& rng_;
};

}  // namespace

std::vector<std::string> synthetic_corpus(std::size_t n_lines, std::uint64_t seed) {
  Rng rng = make_rng(seed, "synthetic.corpus");
  ToyWorld world(rng);
  std::vector<std::string> lines;
  lines.reserve(n_lines);
  for (std::size_t i = 0; i < n_lines; ++i) {
    const std::size_t kind = world.below(10);
    if (kind < 3) {
      lines.push_back(world.everyday_sentence());
    } else if (kind < 4) {
      lines.push_back(world.topic_sentence(topics()[world.below(topics().size())]));
    } else if (kind < 5) {
      lines.push_back(world.review_sentence(world.below(2) == 0));
    } else if (kind < 6) {
      lines.push_back(world.rumor_sentence(world.below(2) == 0));
    } else {
      lines.push_back(world.label_sentence());
    }
  }
  return lines;
}

std::vector<std::string> synthetic_task_names() { return {"sentiment", "rumor", "topic"}; }

TaskDataset synthetic_task(const std::string& name, std::size_t n_train, std::size_t n_test,
                           std::uint64_t seed) {
  Rng rng = make_rng(seed, "synthetic.task." + name);
  ToyWorld world(rng);
  TaskDataset task;
  task.name = name;
  std::function<LabeledText(std::size_t)> make;
  if (name == "sentiment") {
    task.classes = {"negative", "positive"};
    make = [&](std::size_t c) { return LabeledText{world.review_sentence(c == 1), task.classes[c]}; };
  } else if (name == "rumor") {
    task.classes = {"fake", "real"};
    make = [&](std::size_t c) { return LabeledText{world.rumor_sentence(c == 1), task.classes[c]}; };
  } else if (name == "topic") {
    for (const auto& t : topics()) task.classes.push_back(t.name);
    make = [&](std::size_t c) { return LabeledText{world.topic_sentence(topics()[c]), task.classes[c]}; };
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown synthetic task '" + name + "'");
  }
  const std::size_t k = task.classes.size();
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    LabeledText ex = make(i % k);  // balanced, class-interleaved
    ex.split = i < n_train ? Split::kTrain : Split::kTest;
    task.examples.push_back(std::move(ex));
  }
  return task;
}

PromptSpec default_prompt(const std::string& task_name, TemplateKind kind) {
  PromptSpec p;
  p.kind = kind;
  if (task_name == "sentiment") {
    p.template_text = kind == TemplateKind::kNull ? "{sen} [mask]" : "{sen} it was [mask] .";
    p.verbalizer = {{"negative", "bad"}, {"positive", "good"}};
  } else if (task_name == "rumor") {
    p.template_text = kind == TemplateKind::kNull ? "{sen} [mask]" : "{sen} it was [mask] .";
    p.verbalizer = {{"fake", "fake"}, {"real", "real"}};
  } else if (task_name == "topic") {
    p.template_text = kind == TemplateKind::kNull ? "{sen} [mask]" : "{sen} [mask] news";
    for (const auto& t : topics()) p.verbalizer.emplace_back(t.name, t.name);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown synthetic task '" + task_name + "'");
  }
  return p;
}

}  // namespace uat
