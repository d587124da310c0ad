#include "tkfa/io.hpp"
#include "tkfa/kfa.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

using namespace tkfa;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "tkfa_io_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string bytes_of(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

}  // namespace

TEST_SUITE("artifact_io") {
TEST_CASE("P5 layout is first-index-fastest") {
    std::istringstream in(std::string("P5\n2 2\n255\n") + std::string("\x00\xff\x80\x40", 4));
    const DenseTensor t = parse_image(in);
    CHECK(t.dims() == Dims{2, 2});
    CHECK(t.at({0, 0}) == 0.0);
    CHECK(t.at({1, 0}) == 255.0);
    CHECK(t.at({0, 1}) == 128.0);
    CHECK(t.at({1, 1}) == 64.0);
}

TEST_CASE("P6 channels go on the trailing axis") {
    std::istringstream in(std::string("P6 1 1 255\n") + std::string("\x0a\x14\x1e", 3));
    const DenseTensor t = parse_image(in);
    CHECK(t.dims() == Dims{1, 1, 3});
    CHECK(t.at({0, 0, 0}) == 10.0);
    CHECK(t.at({0, 0, 1}) == 20.0);
    CHECK(t.at({0, 0, 2}) == 30.0);
}

TEST_CASE("image header errors") {
    std::istringstream bad_magic("P2\n1 1\n255\n\x01");
    CHECK_THROWS(parse_image(bad_magic));
    std::istringstream bad_max("P5\n1 1\n65535\n\x01\x01");
    CHECK_THROWS(parse_image(bad_max));
    std::istringstream truncated("P5\n2 2\n255\n\x01");
    CHECK_THROWS(parse_image(truncated));
    std::istringstream comment("P5\n# note\n1 1\n255\n\x07");
    CHECK(parse_image(comment)[0] == 7.0);
}

TEST_CASE("image write and read are byte-identical for canonical headers") {
    const std::string gray = std::string("P5\n3 2\n255\n") + std::string("\x01\x02\x03\x04\x05\xfe", 6);
    write_bytes(scratch("g.pgm"), gray);
    const DenseTensor g = read_image(scratch("g.pgm"));
    write_image(scratch("g2.pgm"), g);
    CHECK(bytes_of(scratch("g2.pgm")) == gray);

    const std::string color = std::string("P6\n2 1\n255\n") + std::string("\x01\x02\x03\x04\x05\x06", 6);
    write_bytes(scratch("c.ppm"), color);
    const DenseTensor c = read_image(scratch("c.ppm"));
    CHECK(c.at({1, 0, 0}) == 4.0);
    CHECK(c.at({0, 0, 2}) == 3.0);
    write_image(scratch("c2.ppm"), c);
    CHECK(bytes_of(scratch("c2.ppm")) == color);

    std::ostringstream out;
    format_image(out, DenseTensor({2, 1}, {-5.0, 300.4}));
    CHECK(out.str() == std::string("P5\n2 1\n255\n") + std::string("\x00\xff", 2));
}

TEST_CASE("tensor container golden bytes") {
    std::ostringstream out;
    format_tensor(out, DenseTensor({2, 1}, {1.0, -2.0}));
    const std::string expect = std::string("KFT1", 4) + std::string("\x02\x00\x00\x00", 4) +
                               std::string("\x02\0\0\0\0\0\0\0", 8) +
                               std::string("\x01\0\0\0\0\0\0\0", 8) +
                               std::string("\0\0\0\0\0\0\xf0\x3f", 8) +
                               std::string("\0\0\0\0\0\0\0\xc0", 8);
    CHECK(out.str() == expect);
}

TEST_CASE("tensor container round-trip and errors") {
    RngStream rng(1, 0);
    DenseTensor t({2, 3, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = draw_standard_normal(rng);
    write_tensor(scratch("t.kft"), t);
    const DenseTensor back = read_tensor(scratch("t.kft"));
    CHECK(back == t);
    const std::vector<std::size_t> idx{1, 2, 3};
    CHECK(back.at(idx) == t[vec_index(idx, t.dims())]);
    const std::string raw = bytes_of(scratch("t.kft"));
    double entry = 0.0;
    std::memcpy(&entry, raw.data() + 4 + 4 + 3 * 8 + 8 * vec_index(idx, t.dims()), 8);
    CHECK(entry == t.at(idx));

    write_bytes(scratch("bad.kft"), "KFT2" + raw.substr(4));
    CHECK_THROWS(read_tensor(scratch("bad.kft")));
    write_bytes(scratch("short.kft"), raw.substr(0, raw.size() - 3));
    CHECK_THROWS(read_tensor(scratch("short.kft")));
    write_bytes(scratch("long.kft"), raw + "x");
    CHECK_THROWS(read_tensor(scratch("long.kft")));
}

TEST_CASE("dictionary round-trips") {
    RngStream rng(2, 0);
    Eigen::MatrixXd d(16, 5);
    for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = draw_standard_normal(rng);
    const DictionaryRecord b = make_bpfa_record(d, {4, 4}, 12.5, 0.75, 9);
    CHECK(b.parameter_count() == 80);
    save_dictionary(scratch("b.dict"), b);
    const DictionaryRecord bb = load_dictionary(scratch("b.dict"), "bpfa");
    CHECK((bb.composed - d).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(bb.gamma_eps == doctest::Approx(12.5));
    CHECK(bb.seed == 9);
    CHECK_THROWS(load_dictionary(scratch("b.dict"), "kfa"));
    CHECK(bytes_of(scratch("b.dict")).find("model=bpfa\n") == 0);

    Eigen::MatrixXd x(16, 10);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = draw_standard_normal(rng);
    const FactorData data = FactorData::from_stack(
        DenseTensor({4, 4, 10}, std::vector<double>(x.data(), x.data() + x.size())));
    KfaOptions ko;
    ko.rank = 2;
    const KfaState st = kfa_init(data, 3, RngStream(2, 1), ko);
    const DictionaryRecord k = make_kfa_record(st.kd, 3.0, 4.0, 11);
    CHECK(k.parameter_count() == 3 * 2 * 9);
    save_dictionary(scratch("k.dict"), k);
    const DictionaryRecord kk = load_dictionary(scratch("k.dict"), "kfa");
    REQUIRE(kk.kruskal.has_value());
    CHECK((kk.kruskal->lambdas - st.kd.lambdas).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((kk.kruskal->factors[2][1] - st.kd.factors[2][1]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(kk.kruskal->first_shape == st.kd.first_shape);
    CHECK((kk.composed - st.kd.compose_all()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS(load_dictionary(scratch("k.dict"), "bpfa"));

    std::string text = bytes_of(scratch("k.dict"));
    write_bytes(scratch("cut.dict"), text.substr(0, text.size() - 20));
    CHECK_THROWS(load_dictionary(scratch("cut.dict")));
}

TEST_CASE("parameter counts for 8x8 patches") {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(64, 1000);
    CHECK(make_bpfa_record(d, {8, 8}, 1, 1, 0).parameter_count() == 64000);
    KruskalDictionary kd;
    kd.dims = {8, 8};
    kd.rank = 1;
    kd.factors.assign(1000, {Eigen::MatrixXd::Zero(8, 1), Eigen::MatrixXd::Zero(8, 1)});
    kd.lambdas = Eigen::MatrixXd::Zero(1000, 1);
    kd.deltas = Eigen::MatrixXd::Ones(1000, 1);
    kd.coords = mode_coordinates(kd.dims);
    CHECK(make_kfa_record(kd, 1, 1, 0).parameter_count() == 17000);
}

TEST_CASE("dictionary mosaic size") {
    Eigen::MatrixXd atoms(4, 4);
    atoms.setIdentity();
    const DenseTensor m = dictionary_mosaic(atoms, {2, 2});
    CHECK(m.dims() == Dims{2 * 2 + 1, 2 * 2 + 1});
    const DenseTensor big = dictionary_mosaic(Eigen::MatrixXd::Ones(625, 625), {5, 5, 5, 5});
    CHECK(big.dims() == Dims{25 * 25 + 24, 25 * 25 + 24});
}
}
