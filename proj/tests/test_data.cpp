#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <vector>

#include "efc/data.hpp"
#include "efc/serialize.hpp"

using namespace efc;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/efc_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

void write_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

TEST_CASE("matrix files round-trip bit-exactly and reject bad headers") {
  TempFile f("mat.bin");
  Mat m(2, 3);
  m << 1.5, -2.25, 0.0, 1e-300, 3.14159, -7.0;
  write_matrix(f.path, m);
  Mat back = read_matrix(f.path);
  CHECK(back == m);

  std::ofstream bad(f.path, std::ios::binary);
  bad.write("XXXX", 4);
  bad.close();
  CHECK_THROWS_WITH_AS(read_matrix(f.path), doctest::Contains("byte offset 0"), DataError);
}

TEST_CASE("make_loss produces class targets") {
  auto ce = make_loss(LossKind::SoftmaxCrossEntropy, 2, 4);
  CHECK(ce.label == 2);
  auto mse = make_loss(LossKind::SquaredError, 1, 3);
  CHECK(mse.target == Vec(Eigen::Vector3d(0, 1, 0)));
  CHECK_THROWS_AS(make_loss(LossKind::SoftmaxCrossEntropy, 5, 3), ConfigError);
}

TEST_CASE("synthetic task generation is seeded and shaped as requested") {
  auto a = synthetic_tasks(3, 2, 8, 10, 4, 42);
  auto b = synthetic_tasks(3, 2, 8, 10, 4, 42);
  auto c = synthetic_tasks(3, 2, 8, 10, 4, 43);
  REQUIRE(a.tasks.size() == 3);
  CHECK(a.num_classes == 6);
  CHECK(a.input_dim == 8);
  CHECK(a.tasks[0].train.size() == 20);
  CHECK(a.tasks[0].test.size() == 8);
  CHECK(a.tasks[1].classes == std::vector<int>{2, 3});
  CHECK(a.tasks[2].train.inputs == b.tasks[2].train.inputs);
  CHECK(a.tasks[0].train.inputs != c.tasks[0].train.inputs);

  // class means sit near their prototypes, which have the requested norm
  auto big = synthetic_tasks(1, 1, 16, 400, 4, 7, 5.0, 0.5);
  Vec mean = big.tasks[0].train.inputs.colwise().mean().transpose();
  CHECK(mean.norm() == doctest::Approx(5.0).epsilon(0.05));
}

TEST_CASE("split_tasks partitions by class and validates the partition") {
  Dataset train, test;
  train.inputs.resize(6, 2);
  train.inputs << 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5;
  train.labels.resize(6);
  train.labels << 0, 1, 2, 3, 0, 1;
  train.num_classes = 4;
  test = train;

  auto seq = split_tasks(train, test, {{0, 1}, {2, 3}});
  REQUIRE(seq.tasks.size() == 2);
  CHECK(seq.tasks[0].train.size() == 4);
  CHECK(seq.tasks[1].train.size() == 2);
  CHECK(seq.tasks[0].train.labels.maxCoeff() == 1);
  CHECK(merge_train(seq).size() == 6);

  CHECK_THROWS_WITH_AS(split_tasks(train, test, {{0, 1}, {1, 2}}),
                       doctest::Contains("class 1"), ConfigError);
  Dataset empty_class = train;
  empty_class.num_classes = 5;
  CHECK_THROWS_WITH_AS(split_tasks(empty_class, empty_class, {{0, 4}}),
                       doctest::Contains("class 4"), ConfigError);
}

TEST_CASE("idx loader parses hand-written files and flags corruption") {
  TempFile img("imgs.idx"), lbl("lbls.idx");
  {
    std::ofstream out(img.path, std::ios::binary);
    write_be32(out, 0x00000803);
    write_be32(out, 2);  // two images
    write_be32(out, 2);  // 2x2 pixels
    write_be32(out, 2);
    unsigned char pix[8] = {0, 51, 102, 153, 204, 255, 10, 20};
    out.write(reinterpret_cast<char*>(pix), 8);
  }
  {
    std::ofstream out(lbl.path, std::ios::binary);
    write_be32(out, 0x00000801);
    write_be32(out, 2);
    unsigned char val[2] = {7, 3};
    out.write(reinterpret_cast<char*>(val), 2);
  }
  auto d = load_idx_dataset(img.path, lbl.path);
  CHECK(d.size() == 2);
  CHECK(d.inputs(0, 1) == doctest::Approx(51.0 / 255).epsilon(1e-12));
  CHECK(d.inputs(1, 3) == doctest::Approx(20.0 / 255).epsilon(1e-12));
  CHECK(d.labels[0] == 7);
  CHECK(d.labels[1] == 3);
  CHECK(d.num_classes == 8);

  {
    std::ofstream out(img.path, std::ios::binary);
    write_be32(out, 0x00000777);
  }
  CHECK_THROWS_WITH_AS(load_idx_images(img.path), doctest::Contains("byte offset 0"),
                       DataError);
  {
    std::ofstream out(img.path, std::ios::binary);
    write_be32(out, 0x00000803);
    write_be32(out, 2);
    write_be32(out, 2);
    write_be32(out, 2);
    unsigned char pix[4] = {1, 2, 3, 4};  // only one image's worth
    out.write(reinterpret_cast<char*>(pix), 4);
  }
  CHECK_THROWS_AS(load_idx_images(img.path), DataError);
}

TEST_CASE("feature files round-trip") {
  TempFile base("feat");
  Dataset d;
  d.inputs.resize(3, 4);
  d.inputs.setRandom();
  d.labels.resize(3);
  d.labels << 2, 0, 1;
  d.num_classes = 3;
  save_features(base.path, d);
  auto back = load_features(base.path);
  CHECK(back.inputs == d.inputs);
  CHECK(back.labels == d.labels);
  CHECK(back.num_classes == 3);
  std::remove((base.path + ".fmat").c_str());
  std::remove((base.path + ".lbl").c_str());
}

TEST_CASE("dataset subset and validation") {
  Dataset d;
  d.inputs.resize(3, 2);
  d.inputs << 1, 2, 3, 4, 5, 6;
  d.labels.resize(3);
  d.labels << 0, 1, 0;
  d.num_classes = 2;
  auto s = d.subset({2, 0});
  CHECK(s.inputs.row(0) == d.inputs.row(2));
  CHECK(s.labels[1] == 0);
  CHECK_THROWS_AS(d.subset({5}), ConfigError);
  d.labels[1] = 9;
  CHECK_THROWS_WITH_AS(d.validate(), doctest::Contains("label 9"), ConfigError);
}
