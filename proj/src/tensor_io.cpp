#include "resetedit/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "resetedit/errors.hpp"

namespace resetedit::io {

namespace {

constexpr char kMagic[4] = {'R', 'S', 'T', 'E'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<std::uint8_t> header(DType dtype, const Shape& shape) {
    if (shape.size() > 255) throw ContractError("tensor rank exceeds 255");
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    out.push_back(kVersion);
    out.push_back(static_cast<std::uint8_t>(dtype));
    out.push_back(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) {
        if (d < 0 || d > static_cast<std::int64_t>(UINT32_MAX)) throw ContractError("dimension does not fit u32");
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    return out;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    auto out = header(DType::float32, t.shape());
    out.reserve(out.size() + static_cast<std::size_t>(t.numel()) * 4);
    for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

std::vector<std::uint8_t> encode_bytes(const Shape& shape, std::span<const std::uint8_t> data) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
        throw ContractError("byte payload does not match shape");
    auto out = header(DType::uint8, shape);
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

TensorRecord decode_tensor(std::span<const std::uint8_t> blob) {
    if (blob.size() < 7 || std::memcmp(blob.data(), kMagic, 4) != 0) throw FormatError("not a tensor file (bad magic)");
    if (blob[4] != kVersion) throw FormatError("unsupported tensor file version " + std::to_string(blob[4]));
    TensorRecord rec;
    if (blob[5] > 1) throw FormatError("unknown dtype code " + std::to_string(blob[5]));
    rec.dtype = static_cast<DType>(blob[5]);
    const std::size_t rank = blob[6];
    std::size_t pos = 7;
    if (blob.size() < pos + 4 * rank) throw FormatError("truncated tensor header");
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < rank; ++i, pos += 4) {
        const auto d = get_u32(blob.data() + pos);
        rec.shape.push_back(d);
        count *= d;
    }
    const std::uint64_t elem = rec.dtype == DType::float32 ? 4 : 1;
    if (blob.size() - pos != count * elem)
        throw FormatError("tensor payload is " + std::to_string(blob.size() - pos) + " bytes, expected " +
                          std::to_string(count * elem));
    if (rec.dtype == DType::float32) {
        rec.floats.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) rec.floats[i] = std::bit_cast<float>(get_u32(blob.data() + pos + 4 * i));
    } else {
        rec.bytes.assign(blob.begin() + static_cast<std::ptrdiff_t>(pos), blob.end());
    }
    return rec;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string read_text(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_atomic(path, encode_tensor(t)); }

void save_bytes(const std::filesystem::path& path, const Shape& shape, std::span<const std::uint8_t> data) {
    write_file_atomic(path, encode_bytes(shape, data));
}

TensorRecord load_record(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

Tensor load_tensor(const std::filesystem::path& path) {
    auto rec = load_record(path);
    if (rec.dtype != DType::float32) throw FormatError(path.string() + " does not hold float32 data");
    return Tensor(rec.shape, std::move(rec.floats));
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

std::string sha256_hex(const std::string& text) {
    return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ContractError("save_ppm expects a [3,H,W] image");
    const auto h = image.dim(1), w = image.dim(2);
    std::string head = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> data(head.begin(), head.end());
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t c = 0; c < 3; ++c)
                data.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(image.at(c, y, x), 0.0f, 1.0f) * 255.0f)));
    write_file_atomic(path, data);
}

Tensor load_ppm(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::string text(bytes.begin(), bytes.end());
    std::istringstream in(text);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw FormatError("unsupported PPM header");
    const auto offset = static_cast<std::size_t>(in.tellg()) + 1;
    if (bytes.size() != offset + static_cast<std::size_t>(3 * w * h)) throw FormatError("truncated PPM payload");
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = bytes[offset + static_cast<std::size_t>((y * w + x) * 3 + c)] / 255.0f;
    return img;
}

}  // namespace resetedit::io
