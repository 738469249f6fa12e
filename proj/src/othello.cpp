#include "scl/othello.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "scl/io.hpp"

namespace scl::othello {

namespace {
// d4, e4, d5, e5
constexpr std::uint64_t kCenterMask =
    (1ULL << 27) | (1ULL << 28) | (1ULL << 35) | (1ULL << 36);

constexpr std::uint64_t kNotFileA = 0xfefefefefefefefeULL;
constexpr std::uint64_t kNotFileH = 0x7f7f7f7f7f7f7f7fULL;

struct TokenTables {
    std::array<int, kNumTokens> to_square{};
    std::array<int, kBoardSquares> to_token{};
    TokenTables() {
        to_token.fill(-1);
        int t = 0;
        for (int sq = 0; sq < kBoardSquares; ++sq) {
            if (kCenterMask & (1ULL << sq)) continue;
            to_square[static_cast<std::size_t>(t)] = sq;
            to_token[static_cast<std::size_t>(sq)] = t;
            ++t;
        }
    }
};
const TokenTables kTables;

// One Kogge-Stone style shift per direction, wrap-masked at the A/H files.
inline std::uint64_t shift_e(std::uint64_t b) { return (b << 1) & kNotFileA; }
inline std::uint64_t shift_w(std::uint64_t b) { return (b >> 1) & kNotFileH; }
inline std::uint64_t shift_n(std::uint64_t b) { return b << 8; }
inline std::uint64_t shift_s(std::uint64_t b) { return b >> 8; }
inline std::uint64_t shift_ne(std::uint64_t b) { return (b << 9) & kNotFileA; }
inline std::uint64_t shift_nw(std::uint64_t b) { return (b << 7) & kNotFileH; }
inline std::uint64_t shift_se(std::uint64_t b) { return (b >> 7) & kNotFileA; }
inline std::uint64_t shift_sw(std::uint64_t b) { return (b >> 9) & kNotFileH; }

using ShiftFn = std::uint64_t (*)(std::uint64_t);
constexpr std::array<ShiftFn, 8> kShifts = {shift_e,  shift_w,  shift_n,  shift_s,
                                            shift_ne, shift_nw, shift_se, shift_sw};

template <class Shift>
std::uint64_t moves_in_direction(std::uint64_t own, std::uint64_t opp, std::uint64_t empty,
                                 Shift shift) {
    std::uint64_t chain = shift(own) & opp;
    for (int i = 0; i < 5; ++i) chain |= shift(chain) & opp;
    return shift(chain) & empty;
}

template <class Shift>
std::uint64_t flips_in_direction(std::uint64_t move_bit, std::uint64_t own,
                                 std::uint64_t opp, Shift shift) {
    std::uint64_t chain = shift(move_bit) & opp;
    for (int i = 0; i < 5; ++i) chain |= shift(chain) & opp;
    return (shift(chain) & own) ? chain : 0ULL;
}
}  // namespace

int token_to_square(int token) {
    if (token < 0 || token >= kNumTokens) throw std::invalid_argument("bad move token");
    return kTables.to_square[static_cast<std::size_t>(token)];
}

int square_to_token(int square) {
    if (square < 0 || square >= kBoardSquares) throw std::invalid_argument("bad square");
    return kTables.to_token[static_cast<std::size_t>(square)];
}

std::uint64_t token_map_hash() {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int t = 0; t < kNumTokens; ++t) {
        h ^= static_cast<std::uint64_t>(kTables.to_square[static_cast<std::size_t>(t)]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

int Board::disc_count() const { return std::popcount(dark) + std::popcount(light); }

Board initial_board() {
    Board b;
    b.dark = (1ULL << 35) | (1ULL << 28);   // d5, e4
    b.light = (1ULL << 27) | (1ULL << 36);  // d4, e5
    b.to_move = Player::dark;
    return b;
}

std::uint64_t legal_moves_bb(const Board& b) {
    const std::uint64_t own = b.own();
    const std::uint64_t opp = b.opp();
    const std::uint64_t empty = ~(own | opp);
    std::uint64_t moves = 0;
    for (ShiftFn shift : kShifts) moves |= moves_in_direction(own, opp, empty, shift);
    return moves;
}

std::uint64_t legal_token_mask(const Board& b) {
    std::uint64_t bb = legal_moves_bb(b);
    std::uint64_t mask = 0;
    while (bb) {
        const int sq = std::countr_zero(bb);
        bb &= bb - 1;
        mask |= 1ULL << square_to_token(sq);
    }
    return mask;
}

std::vector<int> legal_move_tokens(const Board& b) {
    std::vector<int> tokens;
    std::uint64_t bb = legal_moves_bb(b);
    while (bb) {
        const int sq = std::countr_zero(bb);
        bb &= bb - 1;
        tokens.push_back(square_to_token(sq));
    }
    return tokens;
}

bool is_terminal(const Board& b) {
    if (legal_moves_bb(b) != 0) return false;
    Board other = b;
    other.to_move = b.to_move == Player::dark ? Player::light : Player::dark;
    return legal_moves_bb(other) == 0;
}

Board apply_move(const Board& b, int square) {
    const std::uint64_t move_bit = 1ULL << square;
    if (!(legal_moves_bb(b) & move_bit)) throw std::invalid_argument("illegal move");

    const std::uint64_t own = b.own();
    const std::uint64_t opp = b.opp();
    std::uint64_t flips = 0;
    for (ShiftFn shift : kShifts) flips |= flips_in_direction(move_bit, own, opp, shift);

    Board next;
    const std::uint64_t new_own = own | move_bit | flips;
    const std::uint64_t new_opp = opp & ~flips;
    if (b.to_move == Player::dark) {
        next.dark = new_own;
        next.light = new_opp;
        next.to_move = Player::light;
    } else {
        next.light = new_own;
        next.dark = new_opp;
        next.to_move = Player::dark;
    }
    // Silent pass: a reply-less side hands the turn straight back.
    if (legal_moves_bb(next) == 0) {
        Board back = next;
        back.to_move = next.to_move == Player::dark ? Player::light : Player::dark;
        if (legal_moves_bb(back) != 0) return back;
    }
    return next;
}

GameRecord random_game(Rng& rng, int max_len, bool with_masks) {
    if (max_len < 0 || max_len > kNumTokens)
        throw std::invalid_argument("max_len must be in [0, 60]");
    GameRecord rec;
    Board b = initial_board();
    while (static_cast<int>(rec.tokens.size()) < max_len) {
        std::uint64_t bb = legal_moves_bb(b);
        if (bb == 0) break;  // terminal: apply_move never leaves a mover stuck
        const int n = std::popcount(bb);
        int pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        int sq = 0;
        while (true) {
            sq = std::countr_zero(bb);
            if (pick == 0) break;
            bb &= bb - 1;
            --pick;
        }
        const Player mover = b.to_move;
        b = apply_move(b, sq);
        // A pass occurred iff the same player moves twice in a row.
        if (b.to_move == mover) rec.had_pass = true;
        rec.tokens.push_back(static_cast<std::uint8_t>(square_to_token(sq)));
        if (with_masks) rec.masks.push_back(legal_token_mask(b));
    }
    return rec;
}

std::uint64_t perft(const Board& b, int depth) {
    if (depth == 0) return 1;
    std::uint64_t nodes = 0;
    std::uint64_t bb = legal_moves_bb(b);
    while (bb) {
        const int sq = std::countr_zero(bb);
        bb &= bb - 1;
        nodes += perft(apply_move(b, sq), depth - 1);
    }
    return nodes;
}

namespace {
constexpr char kCorpusMagic[8] = {'O', 'T', 'H', 'C', 'O', 'R', 'P', '1'};
constexpr char kMaskMagic[8] = {'O', 'T', 'H', 'M', 'A', 'S', 'K', '1'};
}  // namespace

CorpusStats generate_corpus(std::uint64_t count, int min_len, int max_len,
                            std::uint64_t seed, const std::filesystem::path& corpus_path,
                            const std::filesystem::path& masks_path, bool skip_pass_games) {
    if (count < 1) throw std::invalid_argument("corpus needs count >= 1");
    if (min_len < 1 || max_len > kNumTokens - 1 || min_len > max_len)
        throw std::invalid_argument("corpus lengths must satisfy 1 <= min <= max <= 59");

    if (corpus_path.has_parent_path())
        std::filesystem::create_directories(corpus_path.parent_path());
    std::ofstream out(corpus_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + corpus_path.string());
    out.write(kCorpusMagic, sizeof(kCorpusMagic));
    io::write_u32(out, 1);
    io::write_u64(out, count);
    io::write_u64(out, token_map_hash());

    const bool with_masks = !masks_path.empty();
    std::ofstream mask_out;
    if (with_masks) {
        if (masks_path.has_parent_path())
            std::filesystem::create_directories(masks_path.parent_path());
        mask_out.open(masks_path, std::ios::binary);
        if (!mask_out) throw std::runtime_error("cannot write " + masks_path.string());
        mask_out.write(kMaskMagic, sizeof(kMaskMagic));
        io::write_u32(mask_out, 1);
        io::write_u64(mask_out, count);
    }

    CorpusStats stats;
    std::uint64_t attempt = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        GameRecord rec;
        while (true) {
            Rng game_rng = Rng::derive(seed, "game", attempt++);
            const int len = min_len + static_cast<int>(std::floor(
                                          game_rng.uniform() * (max_len - min_len + 1)));
            rec = random_game(game_rng, len, with_masks);
            if (!skip_pass_games || !rec.had_pass) break;
            ++stats.pass_games_skipped;
        }
        out.put(static_cast<char>(rec.tokens.size()));
        out.write(reinterpret_cast<const char*>(rec.tokens.data()),
                  static_cast<std::streamsize>(rec.tokens.size()));
        if (with_masks) {
            mask_out.put(static_cast<char>(rec.masks.size()));
            for (std::uint64_t m : rec.masks) io::write_u64(mask_out, m);
        }
        stats.tokens += rec.tokens.size();
        ++stats.games;
    }
    if (!out || (with_masks && !mask_out)) throw std::runtime_error("corpus write failed");
    return stats;
}

std::vector<std::vector<std::uint64_t>> read_mask_sidecar(
    const std::filesystem::path& masks_path) {
    std::ifstream in(masks_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + masks_path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMaskMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a mask sidecar: " + masks_path.string());
    if (io::read_u32(in) != 1) throw std::runtime_error("unsupported mask version");
    const std::uint64_t count = io::read_u64(in);
    std::vector<std::vector<std::uint64_t>> out(count);
    for (auto& masks : out) {
        const int len = in.get();
        if (len < 0) throw std::runtime_error("truncated mask sidecar");
        masks.resize(static_cast<std::size_t>(len));
        for (auto& m : masks) m = io::read_u64(in);
    }
    if (!in) throw std::runtime_error("truncated mask sidecar");
    return out;
}

Corpus read_corpus(const std::filesystem::path& corpus_path,
                   const std::filesystem::path& masks_path) {
    Corpus corpus;
    std::ifstream in(corpus_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + corpus_path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCorpusMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a corpus file: " + corpus_path.string());
    if (io::read_u32(in) != 1) throw std::runtime_error("unsupported corpus version");
    const std::uint64_t count = io::read_u64(in);
    if (io::read_u64(in) != token_map_hash())
        throw std::runtime_error("corpus token map does not match this build");
    corpus.games.resize(count);
    for (auto& game : corpus.games) {
        const int len = in.get();
        if (len < 0) throw std::runtime_error("truncated corpus");
        game.resize(static_cast<std::size_t>(len));
        in.read(reinterpret_cast<char*>(game.data()), len);
    }
    if (!in) throw std::runtime_error("truncated corpus");

    if (!masks_path.empty()) {
        corpus.masks = read_mask_sidecar(masks_path);
        if (corpus.masks.size() != count)
            throw std::runtime_error("mask sidecar count mismatch");
    }
    return corpus;
}

}  // namespace scl::othello
