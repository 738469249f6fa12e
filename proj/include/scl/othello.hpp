#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scl/rng.hpp"

namespace scl::othello {

// Squares are indexed row-major from a1 = 0 to h8 = 63 (file + 8*rank).
// Move tokens 0..59 enumerate the playable squares in that order, skipping
// the four center squares d4, e4, d5, e5.
inline constexpr int kBoardSquares = 64;
inline constexpr int kNumTokens = 60;

int token_to_square(int token);
int square_to_token(int square);  // -1 for the four center squares

/// FNV-1a hash of the token -> square table, stored in corpus headers so
/// external consumers can verify their token mapping.
std::uint64_t token_map_hash();

enum class Player : std::uint8_t { dark = 0, light = 1 };

struct Board {
    std::uint64_t dark = 0;
    std::uint64_t light = 0;
    Player to_move = Player::dark;

    std::uint64_t own() const { return to_move == Player::dark ? dark : light; }
    std::uint64_t opp() const { return to_move == Player::dark ? light : dark; }
    int disc_count() const;
};

/// Standard start: dark on d5/e4, light on d4/e5, dark to move.
Board initial_board();

/// Bitboard of empty squares that flip at least one opposing disc.
std::uint64_t legal_moves_bb(const Board& b);

/// 60-bit token mask of the legal moves (bit i = token i is legal).
std::uint64_t legal_token_mask(const Board& b);

std::vector<int> legal_move_tokens(const Board& b);

/// Neither side has a legal move.
bool is_terminal(const Board& b);

/// Plays the move (given as a square), flips all bracketed discs, and toggles
/// the side to move. A side with no reply is passed over silently (the turn
/// returns without emitting a token). Throws on an illegal move.
Board apply_move(const Board& b, int square);

struct GameRecord {
    std::vector<std::uint8_t> tokens;
    // masks[k] = legal token mask after the first k+1 moves (for k in
    // [0, tokens.size())), i.e. the ground truth for predicting move k+2.
    std::vector<std::uint64_t> masks;
    bool had_pass = false;
};

/// Uniform random legal moves until the game ends or max_len tokens are out.
GameRecord random_game(Rng& rng, int max_len, bool with_masks);

/// Exhaustive move-tree leaf count (passes handled inside apply_move).
std::uint64_t perft(const Board& b, int depth);

struct CorpusStats {
    std::uint64_t games = 0;
    std::uint64_t tokens = 0;
    std::uint64_t pass_games_skipped = 0;
};

/// Writes `count` random games, each truncated to a length drawn as
/// floor(U[min_len, max_len+1)). The corpus file holds length-prefixed token
/// bytes after a self-describing header; when masks_path is non-empty a
/// sidecar stores one 64-bit legal mask per prefix. With skip_pass_games,
/// games containing a silent pass are redrawn.
CorpusStats generate_corpus(std::uint64_t count, int min_len, int max_len,
                            std::uint64_t seed, const std::filesystem::path& corpus_path,
                            const std::filesystem::path& masks_path, bool skip_pass_games);

struct Corpus {
    std::vector<std::vector<std::uint8_t>> games;
    std::vector<std::vector<std::uint64_t>> masks;  // empty when no sidecar read
};

Corpus read_corpus(const std::filesystem::path& corpus_path,
                   const std::filesystem::path& masks_path = {});

std::vector<std::vector<std::uint64_t>> read_mask_sidecar(
    const std::filesystem::path& masks_path);

}  // namespace scl::othello
