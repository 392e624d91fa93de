#include "etolab/envs.hpp"

#include <algorithm>
#include <charconv>

#include "etolab/rng.hpp"

namespace etolab::envs {

namespace {

constexpr std::uint64_t kCatalogSeed = 0x746f79736869705cull;
constexpr std::int64_t kSeenLo = 0, kSeenHi = 1000000;
constexpr std::int64_t kUnseenLo = 1000000, kUnseenHi = 2000000;

// --- word pools -------------------------------------------------------------

const std::vector<std::string> kShopCategoriesSeen = {"shirt", "lamp", "mug",
                                                      "chair", "watch", "bag"};
const std::vector<std::string> kShopCategoriesUnseen = {"tent", "kettle", "scarf", "vase"};
const std::vector<std::string> kShopColorsSeen = {"red", "blue", "green", "black"};
const std::vector<std::string> kShopColorsUnseen = {"white", "pink", "gold", "gray"};
const std::vector<std::string> kShopSizesSeen = {"small", "large", "wide"};
const std::vector<std::string> kShopSizesUnseen = {"mini", "giant", "slim"};
const std::vector<std::string> kShopMaterialsSeen = {"cotton", "metal", "wood"};
const std::vector<std::string> kShopMaterialsUnseen = {"glass", "leather", "stone"};

const std::vector<std::string> kLabTasks = {"heat", "weigh", "scan",  "strain",
                                            "chill", "blend", "dry", "charge"};
const std::vector<std::string> kLabInstruments = {"heater",  "scale",   "scanner", "strainer",
                                                  "chiller", "blender", "dryer",   "charger"};
const std::vector<std::string> kLabObjectsSeen = {"water", "salt",  "sand", "iron",
                                                  "oil",   "sugar", "clay", "ice"};
const std::vector<std::string> kLabObjectsUnseen = {"lead",  "wax", "foam", "resin",
                                                    "chalk", "tar", "silk", "amber"};
const std::vector<std::string> kLabRooms = {"lab", "store"};
const std::vector<std::string> kLabContainers = {"cabinet", "crate"};

const std::vector<std::string> kHouseRooms = {"kitchen", "bedroom", "bath",
                                              "garden",  "office",  "hall"};
const std::vector<std::string> kHouseReceptacles = {"fridge", "chest",  "basket",
                                                    "bin",    "drawer", "shelf"};
const std::vector<std::string> kHouseObjectsSeen = {"apple",  "book", "towel", "cup",
                                                    "pillow", "soap", "coin",  "fork"};
const std::vector<std::string> kHouseObjectsUnseen = {"vase",   "brush", "candle", "clock",
                                                      "bottle", "hat",   "rope",   "bell"};

std::string price_token(int dollars) { return "p" + std::to_string(dollars); }

void append(std::vector<std::string>& into, const std::vector<std::string>& from) {
    into.insert(into.end(), from.begin(), from.end());
}

ShopCatalog build_catalog(const core::Vocabulary& vocab) {
    ShopCatalog cat;
    cat.categories = kShopCategoriesSeen;
    append(cat.categories, kShopCategoriesUnseen);
    cat.seen_categories = static_cast<int>(kShopCategoriesSeen.size());
    const int per_category = 5;
    for (int c = 0; c < static_cast<int>(cat.categories.size()); ++c) {
        bool seen = c < cat.seen_categories;
        const auto& colors = seen ? kShopColorsSeen : kShopColorsUnseen;
        const auto& sizes = seen ? kShopSizesSeen : kShopSizesUnseen;
        const auto& materials = seen ? kShopMaterialsSeen : kShopMaterialsUnseen;
        for (int j = 0; j < per_category; ++j) {
            int index = c * per_category + j;
            Rng rng(derive_seed(kCatalogSeed, "item", static_cast<std::uint64_t>(index)));
            ShopItem item;
            char id[16];
            std::snprintf(id, sizeof id, "item%02d", index);
            item.id = id;
            item.category = c;
            item.material = vocab.lookup(materials[static_cast<std::size_t>(rng.index(materials.size()))]);
            int ca = rng.index(colors.size());
            int cb = rng.index(colors.size() - 1);
            if (cb >= ca) ++cb;
            item.colors = {vocab.lookup(colors[static_cast<std::size_t>(ca)]),
                           vocab.lookup(colors[static_cast<std::size_t>(cb)])};
            int sa = rng.index(sizes.size());
            int sb = rng.index(sizes.size() - 1);
            if (sb >= sa) ++sb;
            item.sizes = {vocab.lookup(sizes[static_cast<std::size_t>(sa)]),
                          vocab.lookup(sizes[static_cast<std::size_t>(sb)])};
            item.price = 10 * (1 + rng.index(8));
            cat.items.push_back(std::move(item));
        }
    }
    return cat;
}

core::Vocabulary build_shop_vocab() {
    std::vector<std::string> words = {"find",   "under", "shop", "results", "page",
                                      "nothing", "none",  "search", "click", "buy",
                                      "back"};
    append(words, kShopCategoriesSeen);
    append(words, kShopCategoriesUnseen);
    append(words, kShopColorsSeen);
    append(words, kShopColorsUnseen);
    append(words, kShopSizesSeen);
    append(words, kShopSizesUnseen);
    append(words, kShopMaterialsSeen);
    append(words, kShopMaterialsUnseen);
    for (int p = 10; p <= 80; p += 10) words.push_back(price_token(p));
    for (int i = 0; i < 50; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "item%02d", i);
        words.emplace_back(id);
    }
    return core::Vocabulary::build(std::move(words));
}

core::Vocabulary build_lab_vocab() {
    std::vector<std::string> words;
    append(words, kLabTasks);
    append(words, kLabInstruments);
    append(words, kLabObjectsSeen);
    append(words, kLabObjectsUnseen);
    append(words, kLabRooms);
    append(words, kLabContainers);
    words.insert(words.end(), {"sink", "gloves", "sample", "go", "open", "take", "wear",
                               "focus", "rinse", "put", "start", "wait", "look", "shut",
                               "none", "off", "load", "run", "far", "bare", "gloved", "raw",
                               "clean", "nothing", "q0", "q1", "q2", "q3", "q4"});
    return core::Vocabulary::build(std::move(words));
}

core::Vocabulary build_house_vocab() {
    std::vector<std::string> words;
    append(words, kHouseRooms);
    append(words, kHouseReceptacles);
    append(words, kHouseObjectsSeen);
    append(words, kHouseObjectsUnseen);
    words.insert(words.end(), {"stove", "basin", "item", "go", "look", "open", "take", "put",
                               "clean", "heat", "shut", "none", "raw", "washed",
                               "heated", "nothing"});
    return core::Vocabulary::build(std::move(words));
}

// Resolved word ids for fast action matching; one instance per environment.
struct ShopWords {
    int find, under, shop, results, page, nothing, none, search, click, buy, back;
    std::vector<int> categories;  // by category index
    explicit ShopWords(const EnvSpec& s)
        : find(s.vocab.lookup("find")),
          under(s.vocab.lookup("under")),
          shop(s.vocab.lookup("shop")),
          results(s.vocab.lookup("results")),
          page(s.vocab.lookup("page")),
          nothing(s.vocab.lookup("nothing")),
          none(s.vocab.lookup("none")),
          search(s.vocab.lookup("search")),
          click(s.vocab.lookup("click")),
          buy(s.vocab.lookup("buy")),
          back(s.vocab.lookup("back")) {
        for (const auto& c : s.catalog.categories) categories.push_back(s.vocab.lookup(c));
    }
};

struct LabWords {
    std::vector<int> tasks, instruments, rooms, containers;
    int sink, gloves, sample, go, open, take, wear, focus, rinse, put, start, wait, look;
    int shut, none, off, load, run, far, bare, gloved, raw, clean, nothing;
    std::array<int, 5> q;
    explicit LabWords(const core::Vocabulary& v)
        : sink(v.lookup("sink")),
          gloves(v.lookup("gloves")),
          sample(v.lookup("sample")),
          go(v.lookup("go")),
          open(v.lookup("open")),
          take(v.lookup("take")),
          wear(v.lookup("wear")),
          focus(v.lookup("focus")),
          rinse(v.lookup("rinse")),
          put(v.lookup("put")),
          start(v.lookup("start")),
          wait(v.lookup("wait")),
          look(v.lookup("look")),
          shut(v.lookup("shut")),
          none(v.lookup("none")),
          off(v.lookup("off")),
          load(v.lookup("load")),
          run(v.lookup("run")),
          far(v.lookup("far")),
          bare(v.lookup("bare")),
          gloved(v.lookup("gloved")),
          raw(v.lookup("raw")),
          clean(v.lookup("clean")),
          nothing(v.lookup("nothing")) {
        for (const auto& w : kLabTasks) tasks.push_back(v.lookup(w));
        for (const auto& w : kLabInstruments) instruments.push_back(v.lookup(w));
        for (const auto& w : kLabRooms) rooms.push_back(v.lookup(w));
        for (const auto& w : kLabContainers) containers.push_back(v.lookup(w));
        for (int i = 0; i < 5; ++i) q[static_cast<std::size_t>(i)] = v.lookup("q" + std::to_string(i));
    }
    // instruments 0..3 sit in the lab, 4..7 in the store
    static int instrument_room(int task) { return task < 4 ? 0 : 1; }
};

struct HouseWords {
    std::vector<int> rooms, receptacles, task_verbs;
    int stove, basin, item, go, look, open, take, put, clean, heat;
    int shut, open_state, none, raw, washed, heated, nothing;
    explicit HouseWords(const core::Vocabulary& v)
        : stove(v.lookup("stove")),
          basin(v.lookup("basin")),
          item(v.lookup("item")),
          go(v.lookup("go")),
          look(v.lookup("look")),
          open(v.lookup("open")),
          take(v.lookup("take")),
          put(v.lookup("put")),
          clean(v.lookup("clean")),
          heat(v.lookup("heat")),
          shut(v.lookup("shut")),
          open_state(v.lookup("open")),
          none(v.lookup("none")),
          raw(v.lookup("raw")),
          washed(v.lookup("washed")),
          heated(v.lookup("heated")),
          nothing(v.lookup("nothing")) {
        for (const auto& w : kHouseRooms) rooms.push_back(v.lookup(w));
        for (const auto& w : kHouseReceptacles) receptacles.push_back(v.lookup(w));
        task_verbs = {put, clean, heat};
    }
    static bool openable(int room) { return room == 0 || room == 1 || room == 4; }
    static constexpr int kKitchen = 0, kBath = 2;
};

const ShopWords& shop_words(const EnvSpec& spec) {
    static const ShopWords words{spec};
    return words;
}
const LabWords& lab_words(const core::Vocabulary& v) {
    static const LabWords words{v};
    return words;
}
const HouseWords& house_words(const core::Vocabulary& v) {
    static const HouseWords words{v};
    return words;
}

SeedRange split_range(const EnvSpec& spec, core::Split split) {
    return split == core::Split::seen ? spec.seen_seeds : spec.unseen_seeds;
}

}  // namespace

std::string to_string(EnvName name) {
    switch (name) {
        case EnvName::toyshop: return "toyshop";
        case EnvName::toylab: return "toylab";
        case EnvName::toyhouse: return "toyhouse";
    }
    throw EnvError("bad env name");
}

EnvName env_from_string(std::string_view name) {
    if (name == "toyshop") return EnvName::toyshop;
    if (name == "toylab") return EnvName::toylab;
    if (name == "toyhouse") return EnvName::toyhouse;
    throw EnvError("unknown environment: " + std::string(name));
}

EnvSpec make_spec(EnvName name) {
    EnvSpec spec;
    spec.name = name;
    spec.seen_seeds = {kSeenLo, kSeenHi};
    spec.unseen_seeds = {kUnseenLo, kUnseenHi};
    switch (name) {
        case EnvName::toyshop:
            spec.max_steps = 15;
            spec.reward_kind = RewardKind::dense_match;
            spec.vocab = build_shop_vocab();
            spec.catalog = build_catalog(spec.vocab);
            break;
        case EnvName::toylab:
            spec.max_steps = 30;
            spec.reward_kind = RewardKind::dense_subgoal;
            spec.vocab = build_lab_vocab();
            break;
        case EnvName::toyhouse:
            spec.max_steps = 25;
            spec.reward_kind = RewardKind::binary;
            spec.vocab = build_house_vocab();
            break;
    }
    return spec;
}

std::pair<core::Instruction, Goal> generate_instruction(const EnvSpec& spec, core::Split split,
                                                        std::int64_t seed) {
    if (!split_range(spec, split).contains(seed))
        throw EnvError("seed " + std::to_string(seed) + " outside the " + core::to_string(split) +
                       " split range");
    bool seen = split == core::Split::seen;
    Rng rng(derive_seed(static_cast<std::uint64_t>(seed),
                        to_string(spec.name) + "-" + core::to_string(split)));

    core::Instruction instr;
    instr.env_name = to_string(spec.name);
    instr.variation = split;
    instr.id = to_string(spec.name) + "-" + core::to_string(split) + "-" + std::to_string(seed);

    const core::Vocabulary& v = spec.vocab;
    switch (spec.name) {
        case EnvName::toyshop: {
            const auto& w = shop_words(spec);
            int cat = seen ? rng.index(spec.catalog.seen_categories)
                           : spec.catalog.seen_categories +
                                 rng.index(spec.catalog.categories.size() -
                                           static_cast<std::size_t>(spec.catalog.seen_categories));
            int item_index = cat * 5 + rng.index(5);
            const ShopItem& item = spec.catalog.items[static_cast<std::size_t>(item_index)];
            ShopGoal goal;
            goal.item_index = item_index;
            goal.color = item.colors[static_cast<std::size_t>(rng.index(2))];
            goal.size = item.sizes[static_cast<std::size_t>(rng.index(2))];
            goal.material = item.material;
            goal.price_bound = std::min(80, item.price + 10 * rng.index(3));
            instr.tokens = {w.find,
                            w.categories[static_cast<std::size_t>(cat)],
                            goal.color,
                            goal.size,
                            goal.material,
                            w.under,
                            v.lookup(price_token(goal.price_bound))};
            return {instr, goal};
        }
        case EnvName::toylab: {
            const auto& w = lab_words(v);
            const auto& objects = seen ? kLabObjectsSeen : kLabObjectsUnseen;
            LabGoal goal;
            goal.task = rng.index(kLabTasks.size());
            goal.object = v.lookup(objects[static_cast<std::size_t>(rng.index(objects.size()))]);
            goal.object_room = rng.index(2);
            goal.start_room = rng.index(2);
            instr.tokens = {w.tasks[static_cast<std::size_t>(goal.task)], goal.object,
                            w.rooms[static_cast<std::size_t>(goal.object_room)]};
            return {instr, goal};
        }
        case EnvName::toyhouse: {
            const auto& w = house_words(v);
            const auto& objects = seen ? kHouseObjectsSeen : kHouseObjectsUnseen;
            HouseGoal goal;
            goal.task = rng.index(3);
            goal.object = v.lookup(objects[static_cast<std::size_t>(rng.index(objects.size()))]);
            goal.object_room = rng.index(6);
            goal.in_receptacle = rng.index(2);
            goal.target_room = rng.index(6);
            goal.start_room = rng.index(6);
            instr.tokens = {w.task_verbs[static_cast<std::size_t>(goal.task)], goal.object,
                            w.rooms[static_cast<std::size_t>(goal.object_room)],
                            w.receptacles[static_cast<std::size_t>(goal.target_room)]};
            return {instr, goal};
        }
    }
    throw EnvError("bad env name");
}

core::Instruction instruction_from_id(const EnvSpec& spec, std::string_view id) {
    std::string prefix = to_string(spec.name) + "-";
    if (id.substr(0, prefix.size()) != prefix)
        throw EnvError("instruction id " + std::string(id) + " does not belong to " +
                       to_string(spec.name));
    std::string_view rest = id.substr(prefix.size());
    std::size_t dash = rest.find('-');
    if (dash == std::string_view::npos) throw EnvError("malformed instruction id");
    core::Split split = core::split_from_string(rest.substr(0, dash));
    std::string_view seed_text = rest.substr(dash + 1);
    std::int64_t seed = 0;
    auto res = std::from_chars(seed_text.data(), seed_text.data() + seed_text.size(), seed);
    if (res.ec != std::errc{} || res.ptr != seed_text.data() + seed_text.size())
        throw EnvError("malformed instruction id seed");
    return generate_instruction(spec, split, seed).first;
}

// --- episode ----------------------------------------------------------------

Episode::Episode(const EnvSpec& spec, const core::Instruction& instruction)
    : spec_(&spec), instruction_(instruction) {
    if (instruction.env_name != to_string(spec.name))
        throw EnvError("instruction belongs to " + instruction.env_name + ", not " +
                       to_string(spec.name));
    goal_ = generate_instruction(spec, instruction.variation,
                                 [&] {
                                     std::string prefix = to_string(spec.name) + "-" +
                                                          core::to_string(instruction.variation) + "-";
                                     if (instruction.id.substr(0, prefix.size()) != prefix)
                                         throw EnvError("foreign instruction id: " + instruction.id);
                                     return std::stoll(instruction.id.substr(prefix.size()));
                                 }())
                .second;
    switch (spec.name) {
        case EnvName::toyshop: state_ = ShopState{}; break;
        case EnvName::toylab: {
            LabState s;
            s.room = std::get<LabGoal>(goal_).start_room;
            state_ = s;
            break;
        }
        case EnvName::toyhouse: {
            HouseState s;
            const auto& g = std::get<HouseGoal>(goal_);
            s.room = g.start_room;
            s.object_room = g.object_room;
            s.object_inside = g.in_receptacle != 0;
            state_ = s;
            break;
        }
    }
    rebuild_observation();
}

double Episode::current_progress() const {
    if (const auto* lab = std::get_if<LabState>(&state_))
        return static_cast<double>(lab->subgoals) / 4.0;
    if (const auto* house = std::get_if<HouseState>(&state_)) return house->achieved ? 1.0 : 0.0;
    const auto& shop = std::get<ShopState>(state_);
    if (shop.bought < 0) return 0.0;
    return final_reward();
}

const std::vector<int>& Episode::step(std::span<const int> action_tokens) {
    if (done_) throw EnvError("step on a finished episode");
    const int act_end = spec_->vocab.specials().action_end;
    std::span<const int> body = action_tokens;
    if (!body.empty() && body.back() == act_end) body = body.subspan(0, body.size() - 1);
    // ill-formed payloads (specials, out-of-range ids) read as no words
    bool clean = true;
    for (int id : body) {
        if (!spec_->vocab.contains(id) || spec_->vocab.is_special(id)) clean = false;
    }
    nothing_happened_ = true;
    if (clean && !body.empty() && body.size() <= 3) apply(body);
    ++steps_;
    if (steps_ >= spec_->max_steps) done_ = true;
    curve_.push_back(current_progress());
    if (done_)
        observation_.clear();
    else
        rebuild_observation();
    return observation_;
}

double Episode::final_reward() const {
    if (!done_) throw EnvError("final_reward on an unfinished episode");
    if (const auto* lab = std::get_if<LabState>(&state_))
        return static_cast<double>(lab->subgoals) / 4.0;
    if (const auto* house = std::get_if<HouseState>(&state_)) return house->achieved ? 1.0 : 0.0;
    const auto& shop = std::get<ShopState>(state_);
    if (shop.bought < 0) return 0.0;
    const auto& goal = std::get<ShopGoal>(goal_);
    const ShopItem& item = spec_->catalog.items[static_cast<std::size_t>(shop.bought)];
    int matched = 0;
    if (shop.bought_color == goal.color) ++matched;
    if (shop.bought_size == goal.size) ++matched;
    if (item.material == goal.material) ++matched;
    int price_ok = item.price <= goal.price_bound ? 1 : 0;
    return (matched + price_ok) / 4.0;
}

bool Episode::success() const {
    if (const auto* lab = std::get_if<LabState>(&state_)) return lab->subgoals == 4;
    if (const auto* house = std::get_if<HouseState>(&state_)) return house->achieved;
    return done_ && final_reward() == 1.0;
}

void Episode::apply(std::span<const int> words) {
    const core::Vocabulary& v = spec_->vocab;
    switch (spec_->name) {
        case EnvName::toyshop: {
            const auto& w = shop_words(*spec_);
            auto& s = std::get<ShopState>(state_);
            if (words.size() == 2 && words[0] == w.search && s.page == ShopState::Page::search) {
                auto it = std::find(w.categories.begin(), w.categories.end(), words[1]);
                if (it == w.categories.end()) return;
                s.page = ShopState::Page::results;
                s.results_category = static_cast<int>(it - w.categories.begin());
                nothing_happened_ = false;
                return;
            }
            if (words.size() == 2 && words[0] == w.click) {
                int arg = words[1];
                if (arg == w.back) {
                    if (s.page == ShopState::Page::product) {
                        s.page = ShopState::Page::results;
                        s.product = -1;
                        s.chosen_color = s.chosen_size = -1;
                        nothing_happened_ = false;
                    } else if (s.page == ShopState::Page::results) {
                        s.page = ShopState::Page::search;
                        s.results_category = -1;
                        nothing_happened_ = false;
                    }
                    return;
                }
                if (arg == w.buy) {
                    if (s.page == ShopState::Page::product) {
                        s.bought = s.product;
                        s.bought_color = s.chosen_color;
                        s.bought_size = s.chosen_size;
                        done_ = true;
                        nothing_happened_ = false;
                    }
                    return;
                }
                if (s.page == ShopState::Page::results) {
                    for (int j = 0; j < 5; ++j) {
                        int index = s.results_category * 5 + j;
                        if (v.find(spec_->catalog.items[static_cast<std::size_t>(index)].id) == arg) {
                            s.page = ShopState::Page::product;
                            s.product = index;
                            s.chosen_color = s.chosen_size = -1;
                            nothing_happened_ = false;
                            return;
                        }
                    }
                    return;
                }
                if (s.page == ShopState::Page::product) {
                    const ShopItem& item = spec_->catalog.items[static_cast<std::size_t>(s.product)];
                    if (arg == item.colors[0] || arg == item.colors[1]) {
                        s.chosen_color = arg;
                        nothing_happened_ = false;
                    } else if (arg == item.sizes[0] || arg == item.sizes[1]) {
                        s.chosen_size = arg;
                        nothing_happened_ = false;
                    }
                    return;
                }
            }
            return;
        }
        case EnvName::toylab: {
            const auto& w = lab_words(v);
            auto& s = std::get<LabState>(state_);
            const auto& goal = std::get<LabGoal>(goal_);
            int instrument = w.instruments[static_cast<std::size_t>(goal.task)];
            int instrument_room = LabWords::instrument_room(goal.task);
            if (words.size() == 1 && words[0] == w.look) {
                nothing_happened_ = false;
                return;
            }
            if (words.size() == 1 && words[0] == w.wait) {
                nothing_happened_ = false;
                if (s.machine_running && ++s.run_ticks >= 3) {
                    s.machine_running = false;
                    s.run_ticks = 0;
                    if (s.subgoals == 3) {
                        s.subgoals = 4;
                        done_ = true;
                    }
                }
                return;
            }
            if (words.size() == 2 && words[0] == w.go) {
                for (int r = 0; r < 2; ++r) {
                    if (words[1] == w.rooms[static_cast<std::size_t>(r)] && r != s.room) {
                        s.room = r;
                        nothing_happened_ = false;
                    }
                }
                return;
            }
            if (words.size() == 2 && words[0] == w.open) {
                if (words[1] == w.containers[static_cast<std::size_t>(s.room)] &&
                    !s.container_open[s.room]) {
                    s.container_open[s.room] = true;
                    nothing_happened_ = false;
                }
                return;
            }
            bool object_visible = s.object_in_container && s.room == goal.object_room &&
                                  s.container_open[s.room];
            // the goal sample can be addressed by name or as "sample"
            auto names_object = [&](int word) { return word == goal.object || word == w.sample; };
            if (words.size() == 2 && words[0] == w.take) {
                if (words[1] == w.gloves) {
                    if (s.gloves_present[s.room] && s.held == -1) {
                        s.held = -2;
                        s.gloves_present[s.room] = false;
                        nothing_happened_ = false;
                    }
                    return;
                }
                if (names_object(words[1]) && s.gloved && s.held == -1) {
                    if (object_visible) {
                        s.held = goal.object;
                        s.object_in_container = false;
                        if (s.subgoals == 1) s.subgoals = 2;
                        nothing_happened_ = false;
                    } else if (s.object_in_machine && s.room == instrument_room &&
                               !s.machine_running) {
                        s.held = goal.object;
                        s.object_in_machine = false;
                        nothing_happened_ = false;
                    }
                }
                return;
            }
            if (words.size() == 2 && words[0] == w.wear && words[1] == w.gloves) {
                if (s.held == -2) {
                    s.held = -1;
                    s.gloved = true;
                    nothing_happened_ = false;
                }
                return;
            }
            if (words.size() == 2 && words[0] == w.focus && names_object(words[1])) {
                if (object_visible) {
                    if (s.subgoals == 0) s.subgoals = 1;
                    nothing_happened_ = false;
                }
                return;
            }
            if (words.size() == 2 && words[0] == w.rinse && names_object(words[1])) {
                if (s.held == goal.object) {
                    s.rinsed = true;
                    nothing_happened_ = false;
                }
                return;
            }
            if (words.size() == 3 && words[0] == w.put && names_object(words[1]) &&
                words[2] == instrument) {
                if (s.held == goal.object && s.room == instrument_room) {
                    s.held = -1;
                    s.object_in_machine = true;
                    if (s.subgoals == 2 && s.rinsed) s.subgoals = 3;
                    nothing_happened_ = false;
                }
                return;
            }
            if (words.size() == 2 && words[0] == w.start && words[1] == instrument) {
                if (s.room == instrument_room && s.object_in_machine && !s.machine_running) {
                    s.machine_running = true;
                    s.run_ticks = 0;
                    nothing_happened_ = false;
                }
                return;
            }
            return;
        }
        case EnvName::toyhouse: {
            const auto& w = house_words(v);
            auto& s = std::get<HouseState>(state_);
            const auto& goal = std::get<HouseGoal>(goal_);
            auto names_object = [&](int word) { return word == goal.object || word == w.item; };
            if (words.size() == 1 && words[0] == w.look) {
                nothing_happened_ = false;
                return;
            }
            if (words.size() == 2 && words[0] == w.go) {
                for (int r = 0; r < 6; ++r) {
                    if (words[1] == w.rooms[static_cast<std::size_t>(r)] && r != s.room) {
                        s.room = r;
                        nothing_happened_ = false;
                    }
                }
                return;
            }
            if (words.size() == 2 && words[0] == w.open) {
                if (words[1] == w.receptacles[static_cast<std::size_t>(s.room)] &&
                    HouseWords::openable(s.room) && !s.rec_open[s.room]) {
                    s.rec_open[s.room] = true;
                    nothing_happened_ = false;
                }
                return;
            }
            bool rec_is_open = s.rec_open[s.room] || !HouseWords::openable(s.room);
            if (words.size() == 2 && words[0] == w.take && names_object(words[1])) {
                bool present = !s.object_held && s.object_room == s.room &&
                               (!s.object_inside || rec_is_open);
                if (present) {
                    s.object_held = true;
                    s.object_inside = false;
                    nothing_happened_ = false;
                }
                return;
            }
            if (words.size() == 3 && words[0] == w.put && names_object(words[1]) &&
                words[2] == w.receptacles[static_cast<std::size_t>(s.room)]) {
                if (s.object_held && rec_is_open) {
                    s.object_held = false;
                    s.object_room = s.room;
                    s.object_inside = true;
                    nothing_happened_ = false;
                    bool prep_ok = goal.task == 0 || (goal.task == 1 && s.prep == 1) ||
                                   (goal.task == 2 && s.prep == 2);
                    if (s.room == goal.target_room && prep_ok) {
                        s.achieved = true;
                        done_ = true;
                    }
                }
                return;
            }
            if (words.size() == 2 && words[0] == w.clean && names_object(words[1])) {
                if (s.object_held && s.room == HouseWords::kBath) {
                    s.prep = 1;
                    nothing_happened_ = false;
                }
                return;
            }
            if (words.size() == 2 && words[0] == w.heat && names_object(words[1])) {
                if (s.object_held && s.room == HouseWords::kKitchen) {
                    s.prep = 2;
                    nothing_happened_ = false;
                }
                return;
            }
            return;
        }
    }
}

void Episode::rebuild_observation() {
    const core::Vocabulary& v = spec_->vocab;
    observation_.clear();
    switch (spec_->name) {
        case EnvName::toyshop: {
            const auto& w = shop_words(*spec_);
            const auto& s = std::get<ShopState>(state_);
            // goal echo: category, color, size, material, price bound
            for (std::size_t k = 1; k <= 4; ++k)
                observation_.push_back(instruction_.tokens[k]);
            observation_.push_back(instruction_.tokens[6]);
            if (nothing_happened_ && steps_ > 0) {
                observation_.push_back(w.nothing);
                return;
            }
            switch (s.page) {
                case ShopState::Page::search: observation_.push_back(w.shop); break;
                case ShopState::Page::results: {
                    observation_.push_back(w.results);
                    for (int j = 0; j < 5; ++j) {
                        int index = s.results_category * 5 + j;
                        observation_.push_back(
                            v.lookup(spec_->catalog.items[static_cast<std::size_t>(index)].id));
                    }
                    break;
                }
                case ShopState::Page::product: {
                    const ShopItem& item =
                        spec_->catalog.items[static_cast<std::size_t>(s.product)];
                    observation_.push_back(w.page);
                    observation_.push_back(v.lookup(item.id));
                    observation_.push_back(item.material);
                    observation_.push_back(v.lookup(price_token(item.price)));
                    observation_.push_back(item.colors[0]);
                    observation_.push_back(item.colors[1]);
                    observation_.push_back(item.sizes[0]);
                    observation_.push_back(item.sizes[1]);
                    observation_.push_back(s.chosen_color >= 0 ? s.chosen_color : w.none);
                    observation_.push_back(s.chosen_size >= 0 ? s.chosen_size : w.none);
                    break;
                }
            }
            return;
        }
        case EnvName::toylab: {
            const auto& w = lab_words(v);
            const auto& s = std::get<LabState>(state_);
            const auto& goal = std::get<LabGoal>(goal_);
            observation_.assign(instruction_.tokens.begin(), instruction_.tokens.end());
            if (nothing_happened_ && steps_ > 0) {
                observation_.push_back(w.nothing);
                return;
            }
            observation_.push_back(w.rooms[static_cast<std::size_t>(s.room)]);
            observation_.push_back(w.containers[static_cast<std::size_t>(s.room)]);
            observation_.push_back(s.container_open[s.room] ? w.open : w.shut);
            bool object_visible = s.object_in_container && s.room == goal.object_room &&
                                  s.container_open[s.room];
            observation_.push_back(object_visible ? goal.object : w.none);
            observation_.push_back(s.gloves_present[s.room] ? w.gloves : w.none);
            for (int i = 0; i < 4; ++i)
                observation_.push_back(
                    w.instruments[static_cast<std::size_t>(s.room == 0 ? i : 4 + i)]);
            int instrument_room = LabWords::instrument_room(goal.task);
            int machine = w.far;
            if (s.room == instrument_room)
                machine = s.machine_running ? w.run : (s.object_in_machine ? w.load : w.off);
            observation_.push_back(machine);
            observation_.push_back(s.held == -1 ? w.none : (s.held == -2 ? w.gloves : s.held));
            observation_.push_back(s.gloved ? w.gloved : w.bare);
            observation_.push_back(s.rinsed ? w.clean : w.raw);
            observation_.push_back(w.q[static_cast<std::size_t>(s.subgoals)]);
            return;
        }
        case EnvName::toyhouse: {
            const auto& w = house_words(v);
            const auto& s = std::get<HouseState>(state_);
            const auto& goal = std::get<HouseGoal>(goal_);
            observation_.assign(instruction_.tokens.begin(), instruction_.tokens.end());
            if (nothing_happened_ && steps_ > 0) {
                observation_.push_back(w.nothing);
                return;
            }
            bool rec_is_open = s.rec_open[s.room] || !HouseWords::openable(s.room);
            observation_.push_back(w.rooms[static_cast<std::size_t>(s.room)]);
            observation_.push_back(w.receptacles[static_cast<std::size_t>(s.room)]);
            observation_.push_back(rec_is_open ? w.open_state : w.shut);
            bool in_rec_here = !s.object_held && s.object_room == s.room && s.object_inside;
            observation_.push_back(in_rec_here && rec_is_open ? goal.object : w.none);
            bool loose_here = !s.object_held && s.object_room == s.room && !s.object_inside;
            observation_.push_back(loose_here ? goal.object : w.none);
            int fixture = w.none;
            if (s.room == HouseWords::kKitchen) fixture = w.stove;
            if (s.room == HouseWords::kBath) fixture = w.basin;
            observation_.push_back(fixture);
            observation_.push_back(s.object_held ? goal.object : w.none);
            observation_.push_back(s.prep == 0 ? w.raw : (s.prep == 1 ? w.washed : w.heated));
            return;
        }
    }
}

// --- oracle ----------------------------------------------------------------

namespace {

core::Trajectory run_script(const EnvSpec& spec, const core::Instruction& instruction,
                            const std::vector<std::vector<int>>& actions) {
    Episode episode(spec, instruction);
    const int act_end = spec.vocab.specials().action_end;
    core::Trajectory t;
    t.instruction = instruction;
    t.source = core::Source::expert;
    t.seed = 0;
    for (std::size_t i = 0; i < actions.size(); ++i) {
        core::Step step;
        step.action_tokens = actions[i];
        step.action_tokens.push_back(act_end);
        auto obs = episode.step(actions[i]);
        if (episode.done()) {
            if (i + 1 != actions.size()) throw EnvError("oracle script overran episode end");
        } else {
            step.observation_tokens = obs;
        }
        t.steps.push_back(std::move(step));
    }
    if (!episode.done()) throw EnvError("oracle script did not finish the episode");
    t.reward = episode.final_reward();
    return t;
}

}  // namespace

core::Trajectory oracle_expert(const EnvSpec& spec, const core::Instruction& instruction,
                               const Goal& goal) {
    const core::Vocabulary& v = spec.vocab;
    std::vector<std::vector<int>> script;
    switch (spec.name) {
        case EnvName::toyshop: {
            const auto& w = shop_words(spec);
            const auto& g = std::get<ShopGoal>(goal);
            const ShopItem& item = spec.catalog.items[static_cast<std::size_t>(g.item_index)];
            script.push_back({w.search, w.categories[static_cast<std::size_t>(item.category)]});
            script.push_back({w.click, v.lookup(item.id)});
            script.push_back({w.click, g.color});
            script.push_back({w.click, g.size});
            script.push_back({w.click, w.buy});
            break;
        }
        case EnvName::toylab: {
            const auto& w = lab_words(v);
            const auto& g = std::get<LabGoal>(goal);
            int instrument = w.instruments[static_cast<std::size_t>(g.task)];
            int instrument_room = LabWords::instrument_room(g.task);
            int room = g.start_room;
            script.push_back({w.take, w.gloves});
            script.push_back({w.wear, w.gloves});
            if (room != g.object_room) {
                script.push_back({w.go, w.rooms[static_cast<std::size_t>(g.object_room)]});
                room = g.object_room;
            }
            script.push_back({w.open, w.containers[static_cast<std::size_t>(room)]});
            script.push_back({w.focus, w.sample});
            script.push_back({w.take, w.sample});
            script.push_back({w.rinse, w.sample});
            if (room != instrument_room) {
                script.push_back({w.go, w.rooms[static_cast<std::size_t>(instrument_room)]});
                room = instrument_room;
            }
            script.push_back({w.put, w.sample, instrument});
            script.push_back({w.start, instrument});
            script.push_back({w.wait});
            script.push_back({w.wait});
            script.push_back({w.wait});
            break;
        }
        case EnvName::toyhouse: {
            const auto& w = house_words(v);
            const auto& g = std::get<HouseGoal>(goal);
            int room = g.start_room;
            bool opened[6] = {false, false, false, false, false, false};
            script.push_back({w.look});
            if (room != g.object_room) {
                script.push_back({w.go, w.rooms[static_cast<std::size_t>(g.object_room)]});
                script.push_back({w.look});
                room = g.object_room;
            }
            if (g.in_receptacle && HouseWords::openable(room)) {
                script.push_back({w.open, w.receptacles[static_cast<std::size_t>(room)]});
                opened[room] = true;
            }
            script.push_back({w.take, w.item});
            if (g.task == 1 && room != HouseWords::kBath) {
                script.push_back({w.go, w.rooms[HouseWords::kBath]});
                script.push_back({w.look});
                room = HouseWords::kBath;
            }
            if (g.task == 1) script.push_back({w.clean, w.item});
            if (g.task == 2 && room != HouseWords::kKitchen) {
                script.push_back({w.go, w.rooms[HouseWords::kKitchen]});
                script.push_back({w.look});
                room = HouseWords::kKitchen;
            }
            if (g.task == 2) script.push_back({w.heat, w.item});
            if (room != g.target_room) {
                script.push_back({w.go, w.rooms[static_cast<std::size_t>(g.target_room)]});
                script.push_back({w.look});
                room = g.target_room;
            }
            if (HouseWords::openable(room) && !opened[room])
                script.push_back({w.open, w.receptacles[static_cast<std::size_t>(room)]});
            script.push_back({w.put, w.item, w.receptacles[static_cast<std::size_t>(g.target_room)]});
            break;
        }
    }
    core::Trajectory t = run_script(spec, instruction, script);
    if (t.reward != 1.0)
        throw EnvError("oracle failed to reach reward 1.0 on " + instruction.id);
    return t;
}

double replay_reward(const EnvSpec& spec, const core::Trajectory& trajectory) {
    return replay(spec, trajectory).reward;
}

ReplayOutcome replay(const EnvSpec& spec, const core::Trajectory& trajectory) {
    Episode episode(spec, trajectory.instruction);
    for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
        if (episode.done()) throw EnvError("trajectory continues past episode end");
        episode.step(trajectory.steps[i].action_tokens);
    }
    if (!episode.done()) throw EnvError("trajectory ends before the episode is done");
    ReplayOutcome out;
    out.reward = episode.final_reward();
    out.success = episode.success();
    out.curve = episode.reward_curve();
    return out;
}

core::Trajectory load_and_verify(const EnvSpec& spec, const core::TrajectoryRecord& record) {
    core::Instruction instruction = instruction_from_id(spec, record.instruction_id);
    core::Trajectory t = core::from_record(record, spec.vocab, instruction);
    Episode episode(spec, instruction);
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        if (episode.done()) throw EnvError("stored trajectory overruns episode end");
        auto obs = episode.step(t.steps[i].action_tokens);
        if (episode.done()) {
            if (t.steps[i].observation_tokens)
                throw EnvError("stored final step carries an observation");
        } else if (!t.steps[i].observation_tokens || *t.steps[i].observation_tokens != obs) {
            throw EnvError("replayed observation differs from stored record at step " +
                           std::to_string(i) + " of " + record.instruction_id);
        }
    }
    if (!episode.done()) throw EnvError("stored trajectory ends before the episode is done");
    if (episode.final_reward() != t.reward)
        throw EnvError("replayed reward differs from stored reward for " + record.instruction_id);
    return t;
}

}  // namespace etolab::envs
