#include "cotlab/vocab.hpp"

#include <sstream>
#include <stdexcept>

#include "cotlab/ioutil.hpp"

namespace cotlab {

const WordLists& WordLists::builtin() {
    static const WordLists lists = {
        // individuals
        {"max", "alex", "rex", "sam", "wren", "sally", "stella", "polly", "fae", "kai",
         "noa", "finn", "lila", "omar", "ivy", "juno", "mira", "theo", "zara", "nell",
         "otto", "ruby", "cole", "dora"},
        // fictional categories (nonce words)
        {"wumpus", "zumpus", "yumpus", "dumpus", "rompus", "tumpus", "vumpus", "impus",
         "jompus", "lempus", "lorpus", "gorpus", "grimpus", "brimpus", "shumpus", "sterpus",
         "numpus", "twimpus", "gumpus", "frompus", "blimpus", "chumpus", "drompus", "flumpus",
         "glimpus", "hampus", "humpus", "jarpus", "jilpus", "kerpus", "klumpus", "krompus",
         "lampus", "limpus", "mompus", "morpus", "nelpus", "nimpus", "olpus", "pampus",
         "pimpus", "plumpus", "polpus", "quampus", "quimpus", "rampus", "rilpus", "selpus",
         "shampus", "skolpus", "slimpus", "snorpus", "sorpus", "spampus", "stimpus", "stolpus",
         "swompus", "tilpus", "trampus", "trompus", "tulpus", "velpus", "vilpus", "walpus",
         "wilpus", "yalpus", "yelpus", "zalpus", "zilpus", "zolpus", "borpin", "daumpin",
         "felpin", "gorpin", "harpin", "jelpin", "kolpin", "melpin", "norpin", "serpin",
         "tolpin", "varpin", "welpin", "zorpin", "folpee", "rimpee", "galpee", "helpee",
         "jolpee", "kalpee", "melpee", "nolpee", "polpee", "relpee", "selpee", "tolpee",
         "walpee", "zalpee", "shampor", "jempor", "dalpor", "felpor", "golpor", "helpor",
         "jalpor", "kelpor", "malpor", "nolpor", "palpor", "relpor", "salpor", "telpor",
         "valpor", "walpor", "zelpor", "dropant", "brelant", "crolant", "drifant", "flonant",
         "grodant", "jelgit", "krelant", "plodant", "quolant", "slebant", "snodant", "trebant",
         "vrodant", "zonkify", "quiblitz", "flimjam", "zizzlewump", "snickerblat"},
        // real categories
        {"carnivore", "vertebrate", "mammal", "reptile", "insect", "feline", "canine",
         "rodent", "primate", "amphibian", "arachnid", "crustacean", "herbivore", "omnivore",
         "predator", "mollusk", "marsupial", "ungulate", "raptor", "serpent", "beetle",
         "sparrow", "salmon", "terrier", "lizard", "falcon", "badger", "otter"},
        // attributes (real words, shared by fictional and real ontologies)
        {"bright", "happy", "red", "blue", "loud", "quiet", "small", "large", "warm", "cold",
         "sweet", "bitter", "spicy", "dull", "sharp", "smooth", "rough", "shiny", "fuzzy",
         "mean", "kind", "brave", "timid", "angry", "floral", "melodic", "wooden", "metallic",
         "earthy", "fruity", "discordant", "transparent", "opaque", "feathered", "luminous",
         "drab", "sour", "salty", "damp", "brisk"},
    };
    return lists;
}

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
    for (int i = 0; i < static_cast<int>(words_.size()); ++i) {
        auto [it, fresh] = index_.emplace(words_[i], i);
        if (!fresh) throw std::invalid_argument("duplicate vocabulary word: " + words_[i]);
    }
    sp_.dot = id(".");
    sp_.colon = id(":");
    sp_.is = id("is");
    sp_.nott = id("not");
    sp_.vtrue = id("true");
    sp_.vfalse = id("false");
    sp_.orr = id("or");
    sp_.input = id("input");
    sp_.response = id("response");
    sp_.let = id("let");
    sp_.us = id("us");
    sp_.think = id("think");
    sp_.step = id("step");
    sp_.by = id("by");
}

Vocab Vocab::build(const WordLists& lists) {
    std::vector<std::string> words = {".", ":", "is", "not", "true", "false", "or",
                                      "input", "response", "let", "us", "think", "step", "by"};
    auto append = [&words](const std::vector<std::string>& src) {
        words.insert(words.end(), src.begin(), src.end());
    };
    append(lists.individuals);
    append(lists.fictional_categories);
    append(lists.real_categories);
    append(lists.attributes);
    return Vocab(std::move(words));
}

int Vocab::id(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) throw std::invalid_argument("unknown word: '" + w + "'");
    return it->second;
}

const std::string& Vocab::word(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id out of range: " + std::to_string(id));
    return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) out.push_back(id(w));
    return out;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += word(ids[i]);
    }
    return out;
}

void Vocab::save(const std::filesystem::path& path) const {
    std::string body;
    for (const auto& w : words_) { body += w; body += '\n'; }
    write_file_atomic(path, body);
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::istringstream ss(read_file(path));
    std::vector<std::string> words;
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) words.push_back(line);
    return Vocab(std::move(words));
}

} // namespace cotlab
