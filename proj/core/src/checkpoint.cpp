#include "abclab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "abclab/errors.hpp"

namespace abclab {

namespace {

constexpr char kMagic[5] = {'A', 'B', 'C', 'K', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_tensor(std::ostream& out, const std::string& name, const nn::Mat<float>& m) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(m.rows()));
    write_u32(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
}

void read_tensor_into(std::istream& in, const std::string& expected_name, nn::Mat<float>& m) {
    const std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != expected_name) {
        throw IoError("checkpoint: expected tensor '" + expected_name + "', found '" + name + "'");
    }
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    if (rows != static_cast<std::uint32_t>(m.rows()) ||
        cols != static_cast<std::uint32_t>(m.cols())) {
        throw IoError("checkpoint: tensor '" + name + "' has unexpected shape");
    }
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
    if (!in) throw IoError("checkpoint: truncated tensor '" + name + "'");
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace

std::string config_to_text(const ModelConfig& cfg) {
    std::ostringstream out;
    out << "encoder_layers=" << cfg.encoder_layers << '\n'
        << "decoder_layers=" << cfg.decoder_layers << '\n'
        << "heads=" << cfg.heads << '\n'
        << "d_model=" << cfg.d_model << '\n'
        << "d_ff=" << cfg.d_ff << '\n'
        << "dropout=" << cfg.dropout << '\n'
        << "learning_rate=" << cfg.learning_rate << '\n'
        << "pe=" << pe_name(cfg.pe) << '\n'
        << "cpi_period=" << cfg.cpi_period << '\n'
        << "vocab_size=" << cfg.vocab_size << '\n'
        << "init_seed=" << cfg.init_seed << '\n'
        << "grad_clip=" << cfg.grad_clip << '\n'
        << "bias_all_decoder_layers=" << (cfg.bias_all_decoder_layers ? 1 : 0) << '\n';
    return out.str();
}

ModelConfig config_from_text(const std::string& text) {
    const auto kv = parse_kv(text);
    ModelConfig cfg;
    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw IoError(std::string("checkpoint config: missing key ") + key);
        return it->second;
    };
    cfg.encoder_layers = std::stoi(get("encoder_layers"));
    cfg.decoder_layers = std::stoi(get("decoder_layers"));
    cfg.heads = std::stoi(get("heads"));
    cfg.d_model = std::stoi(get("d_model"));
    cfg.d_ff = std::stoi(get("d_ff"));
    cfg.dropout = std::stof(get("dropout"));
    cfg.learning_rate = std::stof(get("learning_rate"));
    cfg.pe = pe_from_name(get("pe"));
    cfg.cpi_period = std::stoi(get("cpi_period"));
    cfg.vocab_size = std::stoi(get("vocab_size"));
    cfg.init_seed = std::stoull(get("init_seed"));
    if (auto it = kv.find("grad_clip"); it != kv.end()) cfg.grad_clip = std::stof(it->second);
    cfg.bias_all_decoder_layers = get("bias_all_decoder_layers") != "0";
    return cfg;
}

void save_checkpoint(Transformer& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));

    std::ostringstream header;
    header << config_to_text(model.config());
    header << "steps=" << model.steps() << '\n';
    header << "tensors=" << model.params().size() * 3 << '\n';
    const std::string header_text = header.str();
    write_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    auto& opt = model.optimizer();
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const auto* p = model.params()[i];
        write_tensor(out, p->name, p->value);
        write_tensor(out, p->name + "#adam_m", opt.moments_m()[i]);
        write_tensor(out, p->name + "#adam_v", opt.moments_v()[i]);
    }
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

std::unique_ptr<Transformer> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    char magic[5];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("load_checkpoint: bad magic in " + path);
    }
    const std::uint32_t header_len = read_u32(in);
    std::string header(header_len, '\0');
    in.read(header.data(), header_len);
    if (!in) throw IoError("load_checkpoint: truncated header in " + path);

    const auto kv = parse_kv(header);
    auto model = std::make_unique<Transformer>(config_from_text(header));
    auto& opt = model->optimizer();
    for (std::size_t i = 0; i < model->params().size(); ++i) {
        auto* p = model->params()[i];
        read_tensor_into(in, p->name, p->value);
        read_tensor_into(in, p->name + "#adam_m", opt.moments_m()[i]);
        read_tensor_into(in, p->name + "#adam_v", opt.moments_v()[i]);
    }
    auto it = kv.find("steps");
    if (it != kv.end()) opt.set_steps(std::stoll(it->second));
    return model;
}

}  // namespace abclab
