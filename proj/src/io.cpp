#include "tkfa/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace tkfa {
namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

// Next whitespace-delimited header token, skipping # comments.
std::string header_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            if (!tok.empty()) break;
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw std::runtime_error("image: truncated header");
    return tok;
}

std::size_t header_number(std::istream& in, const char* what) {
    const std::string tok = header_token(in);
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(tok, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != tok.size() || tok.empty())
        throw std::runtime_error(std::string("image: malformed ") + what + " '" + tok + "'");
    return v;
}

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const char* what) {
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw std::runtime_error(std::string("tensor: truncated ") + what);
    return v;
}

}  // namespace

DenseTensor parse_image(std::istream& in) {
    const std::string magic = header_token(in);
    if (magic != "P5" && magic != "P6")
        throw std::runtime_error("image: unsupported magic '" + magic + "'");
    const std::size_t w = header_number(in, "width");
    const std::size_t h = header_number(in, "height");
    const std::size_t maxval = header_number(in, "maxval");
    if (w == 0 || h == 0) throw std::runtime_error("image: zero dimension");
    if (maxval != 255) throw std::runtime_error("image: only maxval 255 is supported");
    const std::size_t channels = magic == "P6" ? 3 : 1;
    std::vector<unsigned char> bytes(w * h * channels);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw std::runtime_error("image: truncated payload");
    if (channels == 1) {
        DenseTensor out({w, h});
        for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i];
        return out;
    }
    DenseTensor out({w, h, 3});
    for (std::size_t p = 0; p < w * h; ++p)
        for (std::size_t c = 0; c < 3; ++c) out[p + c * w * h] = bytes[p * 3 + c];
    return out;
}

DenseTensor read_image(const std::filesystem::path& path) {
    auto in = open_in(path);
    return parse_image(in);
}

void format_image(std::ostream& out, const DenseTensor& image) {
    const auto& d = image.dims();
    const bool gray = d.size() == 2;
    if (!gray && !(d.size() == 3 && d[2] == 3))
        throw std::invalid_argument("write_image: need dims (W, H) or (W, H, 3)");
    const std::size_t w = d[0], h = d[1];
    out << (gray ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
    const auto byte = [](double v) {
        return static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
    };
    std::vector<unsigned char> bytes(image.size());
    if (gray) {
        for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = byte(image[i]);
    } else {
        for (std::size_t p = 0; p < w * h; ++p)
            for (std::size_t c = 0; c < 3; ++c) bytes[p * 3 + c] = byte(image[p + c * w * h]);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_image(const std::filesystem::path& path, const DenseTensor& image) {
    auto out = open_out(path);
    format_image(out, image);
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

DenseTensor parse_tensor(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || std::memcmp(magic.data(), "KFT1", 4) != 0)
        throw std::runtime_error("tensor: bad magic");
    const auto order = get<std::uint32_t>(in, "order");
    Dims dims(order);
    for (auto& m : dims) {
        m = static_cast<std::size_t>(get<std::uint64_t>(in, "dims"));
        if (m == 0) throw std::runtime_error("tensor: zero dimension");
    }
    std::vector<double> data(element_count(dims));
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double))))
        throw std::runtime_error("tensor: payload size mismatch");
    return DenseTensor(std::move(dims), std::move(data));
}

DenseTensor read_tensor(const std::filesystem::path& path) {
    auto in = open_in(path);
    DenseTensor t = parse_tensor(in);
    if (in.peek() != EOF) throw std::runtime_error("tensor: trailing bytes in " + path.string());
    return t;
}

void format_tensor(std::ostream& out, const DenseTensor& x) {
    out.write("KFT1", 4);
    put(out, static_cast<std::uint32_t>(x.order()));
    for (auto m : x.dims()) put(out, static_cast<std::uint64_t>(m));
    out.write(reinterpret_cast<const char*>(x.data().data()),
              static_cast<std::streamsize>(x.size() * sizeof(double)));
}

void write_tensor(const std::filesystem::path& path, const DenseTensor& x) {
    auto out = open_out(path);
    format_tensor(out, x);
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::size_t DictionaryRecord::parameter_count() const {
    if (model == "kfa") {
        std::size_t per = 1;
        for (auto m : dims) per += m;
        return atoms * rank * per;
    }
    return element_count(dims) * atoms;
}

DictionaryRecord make_bpfa_record(const Eigen::MatrixXd& dict, const Dims& dims,
                                  double gamma_eps, double gamma_s, std::uint64_t seed) {
    if (static_cast<std::size_t>(dict.rows()) != element_count(dims))
        throw std::invalid_argument("dictionary rows do not match atom dims");
    DictionaryRecord r;
    r.model = "bpfa";
    r.dims = dims;
    r.atoms = static_cast<std::size_t>(dict.cols());
    r.gamma_eps = gamma_eps;
    r.gamma_s = gamma_s;
    r.seed = seed;
    r.composed = dict;
    return r;
}

DictionaryRecord make_kfa_record(const KruskalDictionary& kd, double gamma_eps, double gamma_s,
                                 std::uint64_t seed) {
    DictionaryRecord r;
    r.model = "kfa";
    r.dims = kd.dims;
    r.atoms = kd.atom_count();
    r.rank = kd.rank;
    r.alpha = kd.alpha;
    r.gamma_eps = gamma_eps;
    r.gamma_s = gamma_s;
    r.seed = seed;
    r.composed = kd.compose_all();
    r.kruskal = kd;
    return r;
}

namespace {

std::string join_dims(const Dims& d) {
    std::string s;
    for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "x" : "") + std::to_string(d[i]);
    return s;
}

Dims split_dims(const std::string& s) {
    Dims d;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, 'x')) d.push_back(std::stoul(part));
    if (d.empty()) throw std::runtime_error("dictionary: empty dims");
    return d;
}

std::string format_double(double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
}

DenseTensor matrix_block(const Eigen::MatrixXd& m) {
    return DenseTensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                       std::vector<double>(m.data(), m.data() + m.size()));
}

Eigen::MatrixXd block_matrix(const DenseTensor& t, std::size_t rows, std::size_t cols) {
    if (t.order() != 2 || t.dims()[0] != rows || t.dims()[1] != cols)
        throw std::runtime_error("dictionary: block shape mismatch");
    return Eigen::Map<const Eigen::MatrixXd>(t.data().data(), static_cast<Eigen::Index>(rows),
                                             static_cast<Eigen::Index>(cols));
}

constexpr const char* kSeparator = "--";

}  // namespace

void save_dictionary(const std::filesystem::path& path, const DictionaryRecord& rec) {
    auto out = open_out(path);
    out << "model=" << rec.model << '\n'
        << "K=" << rec.atoms << '\n'
        << "R=" << rec.rank << '\n'
        << "T=" << rec.dims.size() << '\n'
        << "dims=" << join_dims(rec.dims) << '\n'
        << "alpha=" << format_double(rec.alpha) << '\n'
        << "gamma_eps=" << format_double(rec.gamma_eps) << '\n'
        << "gamma_s=" << format_double(rec.gamma_s) << '\n'
        << "seed=" << rec.seed << '\n'
        << "param_count=" << rec.parameter_count() << '\n';
    if (rec.model == "kfa") {
        if (!rec.kruskal) throw std::invalid_argument("kfa record without Kruskal factors");
        const KruskalDictionary& kd = *rec.kruskal;
        out << "first_shape=" << format_double(kd.first_shape) << '\n' << kSeparator << '\n';
        for (std::size_t t = 0; t < kd.order(); ++t) {
            DenseTensor block({kd.dims[t], kd.rank, kd.atom_count()});
            for (std::size_t k = 0; k < kd.atom_count(); ++k) {
                const auto& u = kd.factors[k][t];
                std::copy(u.data(), u.data() + u.size(),
                          block.data().begin() + static_cast<std::ptrdiff_t>(k * u.size()));
            }
            format_tensor(out, block);
        }
        format_tensor(out, matrix_block(kd.lambdas));
        format_tensor(out, matrix_block(kd.deltas));
    } else if (rec.model == "bpfa") {
        out << kSeparator << '\n';
        format_tensor(out, matrix_block(rec.composed));
    } else {
        throw std::invalid_argument("unknown dictionary model '" + rec.model + "'");
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

DictionaryRecord load_dictionary(const std::filesystem::path& path,
                                 const std::string& expected_model) {
    auto in = open_in(path);
    std::map<std::string, std::string> kv;
    std::string line;
    bool closed = false;
    while (std::getline(in, line)) {
        if (line == kSeparator) {
            closed = true;
            break;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("dictionary: malformed header line");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (!closed) throw std::runtime_error("dictionary: missing header terminator");
    const auto field = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::runtime_error(std::string("dictionary: missing ") + key);
        return it->second;
    };

    DictionaryRecord r;
    r.model = field("model");
    if (!expected_model.empty() && r.model != expected_model)
        throw std::runtime_error("dictionary: model '" + r.model + "' where '" + expected_model +
                                 "' was expected");
    r.dims = split_dims(field("dims"));
    r.atoms = std::stoul(field("K"));
    r.rank = std::stoul(field("R"));
    if (std::stoul(field("T")) != r.dims.size())
        throw std::runtime_error("dictionary: T does not match dims");
    r.alpha = std::stod(field("alpha"));
    r.gamma_eps = std::stod(field("gamma_eps"));
    r.gamma_s = std::stod(field("gamma_s"));
    r.seed = std::stoull(field("seed"));
    const std::size_t p = element_count(r.dims);

    if (r.model == "kfa") {
        KruskalDictionary kd;
        kd.dims = r.dims;
        kd.rank = r.rank;
        kd.alpha = r.alpha;
        if (auto it = kv.find("first_shape"); it != kv.end()) kd.first_shape = std::stod(it->second);
        kd.coords = mode_coordinates(kd.dims);
        kd.factors.assign(r.atoms, {});
        for (std::size_t t = 0; t < r.dims.size(); ++t) {
            const DenseTensor block = parse_tensor(in);
            if (block.dims() != Dims{r.dims[t], r.rank, r.atoms})
                throw std::runtime_error("dictionary: factor block shape mismatch");
            const std::size_t sz = r.dims[t] * r.rank;
            for (std::size_t k = 0; k < r.atoms; ++k)
                kd.factors[k].push_back(Eigen::Map<const Eigen::MatrixXd>(
                    block.data().data() + k * sz, static_cast<Eigen::Index>(r.dims[t]),
                    static_cast<Eigen::Index>(r.rank)));
        }
        kd.lambdas = block_matrix(parse_tensor(in), r.atoms, r.rank);
        kd.deltas = block_matrix(parse_tensor(in), r.atoms, r.rank);
        r.composed = kd.compose_all();
        r.kruskal = std::move(kd);
    } else if (r.model == "bpfa") {
        r.composed = block_matrix(parse_tensor(in), p, r.atoms);
    } else {
        throw std::runtime_error("dictionary: unknown model '" + r.model + "'");
    }
    if (in.peek() != EOF) throw std::runtime_error("dictionary: trailing bytes");
    if (std::stoul(field("param_count")) != r.parameter_count())
        throw std::runtime_error("dictionary: param_count does not match the payload");
    return r;
}

DenseTensor dictionary_mosaic(const Eigen::MatrixXd& atoms, const Dims& atom_dims) {
    if (atom_dims.empty() || static_cast<std::size_t>(atoms.rows()) != element_count(atom_dims))
        throw std::invalid_argument("mosaic: atom dims do not match");
    const std::size_t split = std::max<std::size_t>(1, atom_dims.size() / 2);
    std::size_t tw = 1;
    for (std::size_t t = 0; t < split; ++t) tw *= atom_dims[t];
    const std::size_t th = static_cast<std::size_t>(atoms.rows()) / tw;
    const std::size_t k = static_cast<std::size_t>(atoms.cols());
    const std::size_t g = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
    const std::size_t w = g * tw + (g - 1);
    const std::size_t h = g * th + (g - 1);
    DenseTensor out({w, h}, std::vector<double>(w * h, 255.0));
    for (std::size_t a = 0; a < k; ++a) {
        const auto col = atoms.col(static_cast<Eigen::Index>(a));
        const double lo = col.minCoeff();
        const double hi = col.maxCoeff();
        const double span = hi > lo ? hi - lo : 1.0;
        const std::size_t x0 = (a % g) * (tw + 1);
        const std::size_t y0 = (a / g) * (th + 1);
        for (std::size_t y = 0; y < th; ++y)
            for (std::size_t x = 0; x < tw; ++x)
                out[(x0 + x) + (y0 + y) * w] =
                    255.0 * (col[static_cast<Eigen::Index>(x + y * tw)] - lo) / span;
    }
    return out;
}

}  // namespace tkfa
