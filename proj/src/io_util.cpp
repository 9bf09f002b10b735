#include "semapop/io_util.hpp"

#include <bit>
#include <charconv>
#include <chrono>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <fcntl.h>
#include <unistd.h>

#include "json.hpp"

namespace semapop {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

std::uint64_t hash_file(const std::filesystem::path& path) { return fnv1a64(read_file(path)); }

std::string format_real(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

namespace {

// Tensor files are written little-endian; all supported targets are
// little-endian, enforced at build time.
static_assert(std::endian::native == std::endian::little, "big-endian targets unsupported");

} // namespace

void write_f32_tensor(const std::filesystem::path& path, const Matrix& m) {
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f =
        m.cast<float>();
    std::string bytes(reinterpret_cast<const char*>(f.data()),
                      sizeof(float) * static_cast<std::size_t>(f.size()));
    write_file(path, bytes);
    nlohmann::json side;
    side["rows"] = m.rows();
    side["cols"] = m.cols();
    write_file(path.string() + ".json", side.dump());
}

Matrix read_f32_tensor(const std::filesystem::path& path) {
    nlohmann::json side = nlohmann::json::parse(read_file(path.string() + ".json"));
    const Index rows = side.at("rows").get<Index>();
    const Index cols = side.at("cols").get<Index>();
    std::string bytes = read_file(path);
    const std::size_t expected = sizeof(float) * static_cast<std::size_t>(rows * cols);
    if (bytes.size() != expected)
        throw std::runtime_error("tensor file " + path.string() + " has " +
                                 std::to_string(bytes.size()) + " bytes, expected " +
                                 std::to_string(expected));
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f(rows, cols);
    std::memcpy(f.data(), bytes.data(), expected);
    return f.cast<double>();
}

Matrix quantize_f32(const Matrix& m) { return m.cast<float>().cast<double>(); }

DirectoryLock::DirectoryLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    lock_path_ = dir / ".lock";
    for (int attempt = 0;; ++attempt) {
        int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            ::close(fd);
            return;
        }
        if (attempt > 600) throw std::runtime_error("timed out waiting for lock: " + lock_path_.string());
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
}

DirectoryLock::~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(lock_path_, ec);
}

} // namespace semapop
