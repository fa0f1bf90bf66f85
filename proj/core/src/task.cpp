#include "abclab/task.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include "abclab/errors.hpp"
#include "abclab/rng.hpp"

namespace abclab {

namespace {

void nat_trim(Nat& n) {
    while (!n.empty() && n.back() == 0) n.pop_back();
}

// base^width as u64 with saturation, for overflow checks on small widths.
std::uint64_t pow_sat(std::uint64_t base, int exp) {
    std::uint64_t r = 1;
    for (int i = 0; i < exp; ++i) {
        if (r > std::numeric_limits<std::uint64_t>::max() / base) {
            return std::numeric_limits<std::uint64_t>::max();
        }
        r *= base;
    }
    return r;
}

std::string digits_key(const std::vector<Nat>& operands) {
    std::string key;
    for (const Nat& n : operands) {
        for (int d : n) key.push_back(static_cast<char>('0' + d));
        key.push_back('|');
    }
    return key;
}

}  // namespace

Nat nat_from_u64(std::uint64_t v, int base) {
    Nat n;
    while (v > 0) {
        n.push_back(static_cast<int>(v % static_cast<std::uint64_t>(base)));
        v /= static_cast<std::uint64_t>(base);
    }
    return n;
}

std::uint64_t nat_to_u64(const Nat& n, int base) {
    std::uint64_t v = 0;
    for (auto it = n.rbegin(); it != n.rend(); ++it) {
        if (v > (std::numeric_limits<std::uint64_t>::max() - static_cast<std::uint64_t>(*it)) /
                    static_cast<std::uint64_t>(base)) {
            throw OverflowError("nat_to_u64: value exceeds 64 bits");
        }
        v = v * static_cast<std::uint64_t>(base) + static_cast<std::uint64_t>(*it);
    }
    return v;
}

Nat nat_add(const Nat& a, const Nat& b, int base) {
    Nat out;
    out.reserve(std::max(a.size(), b.size()) + 1);
    int carry = 0;
    for (std::size_t i = 0; i < std::max(a.size(), b.size()) || carry; ++i) {
        int s = carry;
        if (i < a.size()) s += a[i];
        if (i < b.size()) s += b[i];
        out.push_back(s % base);
        carry = s / base;
    }
    nat_trim(out);
    return out;
}

Nat nat_succ(const Nat& a, int base) { return nat_add(a, Nat{1}, base); }

Nat nat_mul_digit(const Nat& a, int d, int base) {
    Nat out;
    out.reserve(a.size() + 1);
    int carry = 0;
    for (int limb : a) {
        int p = limb * d + carry;
        out.push_back(p % base);
        carry = p / base;
    }
    while (carry) {
        out.push_back(carry % base);
        carry /= base;
    }
    nat_trim(out);
    return out;
}

int nat_digit_count(const Nat& n) { return n.empty() ? 1 : static_cast<int>(n.size()); }

const char* task_name(TaskKind task) {
    switch (task) {
        case TaskKind::Successor: return "successor";
        case TaskKind::Addition: return "addition";
        case TaskKind::Parity: return "parity";
        case TaskKind::NxOne: return "nx1";
    }
    return "?";
}

TaskKind task_from_name(const std::string& name) {
    if (name == "successor") return TaskKind::Successor;
    if (name == "addition") return TaskKind::Addition;
    if (name == "parity") return TaskKind::Parity;
    if (name == "nx1" || name == "nxone") return TaskKind::NxOne;
    throw std::invalid_argument("unknown task '" + name + "'");
}

int task_arity(TaskKind task) {
    switch (task) {
        case TaskKind::Successor:
        case TaskKind::Parity: return 1;
        case TaskKind::Addition:
        case TaskKind::NxOne: return 2;
    }
    return 0;
}

int task_base(TaskKind task, int configured_base) {
    return task == TaskKind::Parity ? 2 : configured_base;
}

bool task_is_binary(TaskKind task) { return task == TaskKind::Addition; }

std::vector<int> encode_number(const Nat& n, int width, int base) {
    (void)base;  // digits are already base-canonical; width is the only constraint
    if (static_cast<int>(n.size()) > width) {
        throw OverflowError("encode_number: value needs " + std::to_string(n.size()) +
                            " digits, width is " + std::to_string(width));
    }
    std::vector<int> tokens(static_cast<std::size_t>(width), 0);
    for (std::size_t i = 0; i < n.size(); ++i) {
        tokens[static_cast<std::size_t>(width) - 1 - i] = n[i];
    }
    return tokens;
}

std::vector<int> encode_number(std::uint64_t n, int width, int base) {
    return encode_number(nat_from_u64(n, base), width, base);
}

Nat decode_number(const std::vector<int>& tokens, int base) {
    Nat n;
    n.reserve(tokens.size());
    for (auto it = tokens.rbegin(); it != tokens.rend(); ++it) {
        if (*it < 0 || *it >= base) {
            throw std::invalid_argument("decode_number: non-digit token");
        }
        n.push_back(*it);
    }
    nat_trim(n);
    return n;
}

Nat task_result(TaskKind task, const std::vector<Nat>& operands, int base) {
    switch (task) {
        case TaskKind::Successor: return nat_succ(operands.at(0), base);
        case TaskKind::Addition: return nat_add(operands.at(0), operands.at(1), base);
        case TaskKind::NxOne: {
            const Nat& b = operands.at(1);
            int digit = b.empty() ? 0 : b[0];
            return nat_mul_digit(operands.at(0), digit, base);
        }
        case TaskKind::Parity: break;
    }
    throw std::invalid_argument("task_result: parity result is a sequence, not a number");
}

int target_length(TaskKind task, int width) {
    return task == TaskKind::Parity ? width : width + 1;
}

int input_length(TaskKind task, int width, bool aligned) {
    switch (task) {
        case TaskKind::Successor:
        case TaskKind::Parity: return width;
        case TaskKind::Addition: return 2 * width + 1;
        case TaskKind::NxOne: return aligned ? 2 * width + 1 : width + 2;
    }
    return width;
}

int decoder_rows(TaskKind task, int width) { return target_length(task, width) + 1; }

Sample make_sample(TaskKind task, const std::vector<Nat>& operands, int base, int width,
                   bool aligned) {
    if (static_cast<int>(operands.size()) != task_arity(task)) {
        throw ArityError(std::string("make_sample: ") + task_name(task) + " expects " +
                         std::to_string(task_arity(task)) + " operands, got " +
                         std::to_string(operands.size()));
    }
    base = task_base(task, base);

    Sample s;
    s.operands = operands;
    s.length_digits = width;

    switch (task) {
        case TaskKind::Successor: {
            s.input_tokens = encode_number(operands[0], width, base);
            s.target_tokens = nat_succ(operands[0], base);
            s.target_tokens.resize(static_cast<std::size_t>(width) + 1, 0);
            break;
        }
        case TaskKind::Parity: {
            s.input_tokens = encode_number(operands[0], width, base);
            s.target_tokens.resize(s.input_tokens.size());
            int acc = 0;
            // x_1 is the lowest-order bit, i.e. the last input token.
            for (std::size_t i = 0; i < s.input_tokens.size(); ++i) {
                acc ^= s.input_tokens[s.input_tokens.size() - 1 - i];
                s.target_tokens[i] = acc;
            }
            break;
        }
        case TaskKind::Addition: {
            auto a = encode_number(operands[0], width, base);
            auto b = encode_number(operands[1], width, base);
            if (aligned) {
                // "+ a_n b_n ... a_1 b_1"
                s.input_tokens.push_back(Vocab::kPlus);
                for (int i = 0; i < width; ++i) {
                    s.input_tokens.push_back(a[static_cast<std::size_t>(i)]);
                    s.input_tokens.push_back(b[static_cast<std::size_t>(i)]);
                }
            } else {
                s.input_tokens = a;
                s.input_tokens.push_back(Vocab::kPlus);
                s.input_tokens.insert(s.input_tokens.end(), b.begin(), b.end());
            }
            s.target_tokens = nat_add(operands[0], operands[1], base);
            s.target_tokens.resize(static_cast<std::size_t>(width) + 1, 0);
            break;
        }
        case TaskKind::NxOne: {
            const Nat& bnat = operands[1];
            if (bnat.size() > 1) {
                throw OverflowError("make_sample: N x 1 second operand must be a single digit");
            }
            int b = bnat.empty() ? 0 : bnat[0];
            auto a = encode_number(operands[0], width, base);
            if (aligned) {
                // "* a_n b a_{n-1} b ... a_1 b"
                s.input_tokens.push_back(Vocab::kTimes);
                for (int i = 0; i < width; ++i) {
                    s.input_tokens.push_back(a[static_cast<std::size_t>(i)]);
                    s.input_tokens.push_back(b);
                }
            } else {
                s.input_tokens = a;
                s.input_tokens.push_back(Vocab::kTimes);
                s.input_tokens.push_back(b);
            }
            s.target_tokens = nat_mul_digit(operands[0], b, base);
            s.target_tokens.resize(static_cast<std::size_t>(width) + 1, 0);
            break;
        }
    }
    return s;
}

Sample make_sample(TaskKind task, const std::vector<std::uint64_t>& operands, int base, int width,
                   bool aligned) {
    std::vector<Nat> nats;
    nats.reserve(operands.size());
    const int b = task_base(task, base);
    for (std::uint64_t v : operands) {
        if (pow_sat(static_cast<std::uint64_t>(b), width) != std::numeric_limits<std::uint64_t>::max() &&
            v >= pow_sat(static_cast<std::uint64_t>(b), width)) {
            throw OverflowError("make_sample: operand " + std::to_string(v) + " does not fit " +
                                std::to_string(width) + " digits");
        }
        nats.push_back(nat_from_u64(v, b));
    }
    return make_sample(task, nats, base, width, aligned);
}

DatasetSplit gen_interpolation_split(TaskKind task, std::uint64_t seed, const SplitOptions& opts) {
    if (opts.range_max < 2) {
        throw std::invalid_argument("gen_interpolation_split: range_max must be >= 2");
    }
    const int base = task_base(task, opts.base);
    const int fixed_width = nat_digit_count(nat_from_u64(opts.range_max - 1, base));

    Rng rng(mix64(seed, 0xda7a5e7ULL));

    std::vector<std::uint64_t> pi(opts.range_max);
    for (std::uint64_t i = 0; i < opts.range_max; ++i) pi[i] = i;
    rng.shuffle(pi);

    // Operand tuples, deduplicated, in permutation order.
    const std::size_t want = opts.sample_count ? opts.sample_count : pi.size();
    std::vector<std::vector<std::uint64_t>> tuples;
    tuples.reserve(want);
    if (task_arity(task) == 1) {
        for (std::uint64_t v : pi) tuples.push_back({v});
    } else {
        std::unordered_set<std::uint64_t> seen;
        seen.reserve(want * 2);
        while (tuples.size() < want) {
            std::uint64_t a = pi[rng.below(pi.size())];
            std::uint64_t b;
            if (task == TaskKind::NxOne) {
                b = rng.below(static_cast<std::uint64_t>(base));
            } else {
                b = pi[rng.below(pi.size())];
            }
            std::uint64_t key = mix64(a, b);
            if (!seen.insert(key).second) continue;
            tuples.push_back({a, b});
        }
    }

    DatasetSplit split;
    split.seed = seed;
    split.ratio_train = opts.ratio_train;
    split.ratio_val = opts.ratio_val;
    const std::size_t total = tuples.size();
    const std::size_t n_val = total * static_cast<std::size_t>(opts.ratio_val) /
                              static_cast<std::size_t>(opts.ratio_train + opts.ratio_val);
    for (std::size_t i = 0; i < total; ++i) {
        int width = fixed_width;
        if (opts.variable_width) {
            width = nat_digit_count(nat_from_u64(tuples[i][0], base));
        }
        Sample s = make_sample(task, tuples[i], base, width, opts.aligned);
        if (i < total - n_val) {
            split.train.push_back(std::move(s));
        } else {
            split.validation.push_back(std::move(s));
        }
    }
    return split;
}

std::uint64_t extrapolation_sample_count(int length_digits, int base, std::uint64_t cap) {
    const std::uint64_t hi = pow_sat(static_cast<std::uint64_t>(base), length_digits);
    const std::uint64_t lo = pow_sat(static_cast<std::uint64_t>(base), length_digits - 1);
    if (hi == std::numeric_limits<std::uint64_t>::max()) return cap;
    return std::min(hi - lo, cap);
}

std::vector<Sample> gen_extrapolation_set(TaskKind task, int length_digits, int base,
                                          std::uint64_t cap, std::uint64_t seed, bool aligned) {
    if (length_digits < 1) {
        throw std::invalid_argument("gen_extrapolation_set: length must be >= 1");
    }
    base = task_base(task, base);
    const std::uint64_t count = extrapolation_sample_count(length_digits, base, cap);
    const std::uint64_t domain = extrapolation_sample_count(length_digits, base,
                                                            std::numeric_limits<std::uint64_t>::max());

    Rng rng(mix64(seed, static_cast<std::uint64_t>(length_digits), 0xe7a90ULL));

    auto random_operand = [&]() {
        Nat n(static_cast<std::size_t>(length_digits));
        for (int i = 0; i < length_digits - 1; ++i) {
            n[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(base)));
        }
        n[static_cast<std::size_t>(length_digits) - 1] =
            1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(base) - 1));
        return n;
    };

    std::vector<std::vector<Nat>> tuples;
    tuples.reserve(count);
    if (task_arity(task) == 1 && count == domain) {
        // Small domains are enumerated outright.
        for (std::uint64_t v = pow_sat(static_cast<std::uint64_t>(base), length_digits - 1);
             tuples.size() < count; ++v) {
            tuples.push_back({nat_from_u64(v, base)});
        }
    } else {
        std::unordered_set<std::string> seen;
        seen.reserve(count * 2);
        while (tuples.size() < count) {
            std::vector<Nat> tuple{random_operand()};
            if (task == TaskKind::Addition) {
                tuple.push_back(random_operand());
            } else if (task == TaskKind::NxOne) {
                tuple.push_back(nat_from_u64(rng.below(static_cast<std::uint64_t>(base)), base));
            }
            if (!seen.insert(digits_key(tuple)).second) continue;
            tuples.push_back(std::move(tuple));
        }
    }

    std::vector<Sample> out;
    out.reserve(tuples.size());
    for (const auto& tuple : tuples) {
        out.push_back(make_sample(task, tuple, base, length_digits, aligned));
    }
    return out;
}

bool sequence_match(const Sample& sample, const std::vector<int>& decoded) {
    return decoded == sample.target_tokens;
}

bool exact_match(TaskKind task, const Sample& sample, const std::vector<int>& decoded, int base) {
    base = task_base(task, base);
    if (task == TaskKind::Parity) {
        return decoded == sample.target_tokens;
    }
    for (int t : decoded) {
        if (!Vocab::is_digit(t) || t >= base) return false;
    }
    Nat value = decoded;  // reversed digits are least-significant first already
    while (!value.empty() && value.back() == 0) value.pop_back();
    return value == task_result(task, sample.operands, base);
}

void export_tsv(const std::vector<Sample>& samples, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("export_tsv: cannot open " + path);
    Vocab vocab;
    for (const Sample& s : samples) {
        out << vocab.to_string(s.input_tokens) << '\t' << vocab.to_string(s.target_tokens) << '\n';
    }
    if (!out) throw IoError("export_tsv: write failed for " + path);
}

std::vector<Sample> import_tsv(const std::string& path, int base) {
    std::ifstream in(path);
    if (!in) throw IoError("import_tsv: cannot open " + path);
    Vocab vocab;
    std::vector<Sample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw IoError("import_tsv: missing tab in line: " + line);
        Sample s;
        s.input_tokens = vocab.to_tokens(line.substr(0, tab));
        s.target_tokens = vocab.to_tokens(line.substr(tab + 1));

        // Recover operands from the input rendering (natural or aligned).
        std::vector<int> cur;
        std::vector<std::vector<int>> groups;
        bool aligned = !s.input_tokens.empty() && !Vocab::is_digit(s.input_tokens[0]);
        if (aligned) {
            int op = s.input_tokens[0];
            std::vector<int> a, b;
            const std::size_t n = s.input_tokens.size() - 1;
            if (op == Vocab::kPlus) {
                for (std::size_t i = 1; i < s.input_tokens.size(); i += 2) {
                    a.push_back(s.input_tokens.at(i));
                    b.push_back(s.input_tokens.at(i + 1));
                }
            } else {
                for (std::size_t i = 1; i < s.input_tokens.size(); i += 2) {
                    a.push_back(s.input_tokens[i]);
                }
                b.push_back(s.input_tokens[n]);
            }
            groups.push_back(a);
            groups.push_back(b);
        } else {
            for (int t : s.input_tokens) {
                if (Vocab::is_digit(t)) {
                    cur.push_back(t);
                } else {
                    groups.push_back(cur);
                    cur.clear();
                }
            }
            groups.push_back(cur);
        }
        int width = 0;
        for (const auto& g : groups) {
            s.operands.push_back(decode_number(g, base));
            width = std::max(width, static_cast<int>(g.size()));
        }
        s.length_digits = width;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace abclab
