#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abclab/vocab.hpp"

namespace abclab {

// Natural number as base-`base` digits, least-significant first, no trailing
// zero limbs (canonical form; zero is an empty vector). Extrapolation operands
// go up to 50 digits, past any machine integer.
using Nat = std::vector<int>;

Nat nat_from_u64(std::uint64_t v, int base);
std::uint64_t nat_to_u64(const Nat& n, int base);  // throws OverflowError past 2^64
Nat nat_add(const Nat& a, const Nat& b, int base);
Nat nat_succ(const Nat& a, int base);
Nat nat_mul_digit(const Nat& a, int d, int base);
int nat_digit_count(const Nat& n);  // 1 for zero

enum class TaskKind { Successor, Addition, Parity, NxOne };

const char* task_name(TaskKind task);
TaskKind task_from_name(const std::string& name);
int task_arity(TaskKind task);
// Parity is defined over bit strings.
int task_base(TaskKind task, int configured_base);
bool task_is_binary(TaskKind task);  // two digit-sequence operands interleaved when aligned

struct Sample {
    std::vector<int> input_tokens;   // no SOS/EOS framing
    std::vector<int> target_tokens;  // result digits reversed (lowest first), no EOS
    std::vector<Nat> operands;
    int length_digits = 0;  // max operand digit count L
};

struct DatasetSplit {
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::uint64_t seed = 0;
    int ratio_train = 7;
    int ratio_val = 1;
};

// MSB-first digit tokens, left-padded with zeros to `width`.
std::vector<int> encode_number(const Nat& n, int width, int base);
std::vector<int> encode_number(std::uint64_t n, int width, int base);
// Inverse of encode_number on MSB-first digit tokens.
Nat decode_number(const std::vector<int>& tokens, int base);

Sample make_sample(TaskKind task, const std::vector<Nat>& operands, int base, int width,
                   bool aligned);
Sample make_sample(TaskKind task, const std::vector<std::uint64_t>& operands, int base, int width,
                   bool aligned);

struct SplitOptions {
    std::uint64_t range_max = std::uint64_t{1} << 20;  // operand values drawn from [0, range_max)
    std::uint64_t sample_count = 0;                    // tuples to draw; 0 = range_max
    int base = 10;
    bool aligned = false;
    // Width handling: fixed width = digit count of range_max-1 (the paper's fixed
    // left-padding), or per-sample width for tasks trained on mixed lengths.
    bool variable_width = false;
    int ratio_train = 7;
    int ratio_val = 1;
};

DatasetSplit gen_interpolation_split(TaskKind task, std::uint64_t seed, const SplitOptions& opts);

std::vector<Sample> gen_extrapolation_set(TaskKind task, int length_digits, int base,
                                          std::uint64_t cap, std::uint64_t seed,
                                          bool aligned = false);
std::uint64_t extrapolation_sample_count(int length_digits, int base, std::uint64_t cap);

// Task result as canonical Nat (undefined for Parity, which is sequence-valued).
Nat task_result(TaskKind task, const std::vector<Nat>& operands, int base);

// Sequence geometry for operand width `width`: target length (one carry
// headroom digit except Parity), encoder input length, and decoder rows
// (targets plus the EOS step).
int target_length(TaskKind task, int width);
int input_length(TaskKind task, int width, bool aligned);
int decoder_rows(TaskKind task, int width);

// Exact sequence equality against the sample's target (calibration filter).
bool sequence_match(const Sample& sample, const std::vector<int>& decoded);
// Evaluation rule: un-reverse the decoded digits and compare numeric values,
// so a missing or extra padding zero in the high digits does not count as an
// error. Parity compares the running-xor sequence exactly.
bool exact_match(TaskKind task, const Sample& sample, const std::vector<int>& decoded, int base);

// Line-delimited "<input>\t<target>" with the literal vocabulary characters.
void export_tsv(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> import_tsv(const std::string& path, int base);

}  // namespace abclab
