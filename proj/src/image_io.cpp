#include "snarm/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "snarm/error.hpp"

namespace snarm {

namespace {

struct PnmHeader {
    char kind = 0;  // '5' or '6'
    int width = 0, height = 0, maxval = 0;
};

int read_header_int(std::istream& is, const std::filesystem::path& path) {
    char c = 0;
    while (is.get(c)) {
        if (c == '#') {
            std::string skip;
            std::getline(is, skip);
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            break;
        }
    }
    if (!is || !std::isdigit(static_cast<unsigned char>(c))) throw DataError("malformed image header: " + path.string());
    int v = c - '0';
    while (is.get(c) && std::isdigit(static_cast<unsigned char>(c))) v = v * 10 + (c - '0');
    return v;  // the single whitespace after the number has been consumed
}

PnmHeader read_header(std::istream& is, const std::filesystem::path& path) {
    char p = 0;
    PnmHeader h;
    if (!is.get(p) || p != 'P' || !is.get(h.kind) || (h.kind != '5' && h.kind != '6')) {
        throw DataError("unsupported image format (want binary PGM/PPM): " + path.string());
    }
    h.width = read_header_int(is, path);
    h.height = read_header_int(is, path);
    h.maxval = read_header_int(is, path);
    if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
        throw DataError("invalid image dimensions: " + path.string());
    }
    return h;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    return is;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    return os;
}

std::vector<double> read_samples(std::istream& is, const PnmHeader& h, int channels, const std::filesystem::path& path) {
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height * channels;
    const int bytes = h.maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(n * bytes);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw DataError("truncated image data: " + path.string());
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int v = bytes == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
        out[i] = static_cast<double>(v) / h.maxval;
    }
    return out;
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Image read_image(const std::filesystem::path& path) {
    auto is = open_in(path);
    const PnmHeader h = read_header(is, path);
    const int ch = h.kind == '6' ? 3 : 1;
    const auto s = read_samples(is, h, ch, path);
    Image img{Grid(h.height, h.width, 3), path.string()};
    for (std::size_t i = 0; i < img.pixels.cells(); ++i) {
        for (int k = 0; k < 3; ++k) img.pixels.data[i * 3 + k] = s[i * ch + (ch == 3 ? k : 0)];
    }
    return img;
}

void write_ppm(const std::filesystem::path& path, const Grid& rgb) {
    require(rgb.c == 3, "write_ppm: expects three channels");
    auto os = open_out(path);
    os << "P6\n" << rgb.w << ' ' << rgb.h << "\n255\n";
    std::vector<unsigned char> buf(rgb.size());
    std::transform(rgb.data.begin(), rgb.data.end(), buf.begin(), to_byte);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Map read_mask(const std::filesystem::path& path) {
    auto is = open_in(path);
    const PnmHeader h = read_header(is, path);
    if (h.kind != '5') throw DataError("mask must be a PGM: " + path.string());
    const auto s = read_samples(is, h, 1, path);
    Map m(h.height, h.width, 1);
    for (std::size_t i = 0; i < s.size(); ++i) m.data[i] = s[i] > 0.0 ? 1.0 : 0.0;
    return m;
}

void write_mask(const std::filesystem::path& path, const Map& mask) {
    require(mask.c == 1, "write_mask: expects one channel");
    auto os = open_out(path);
    os << "P5\n" << mask.w << ' ' << mask.h << "\n255\n";
    std::vector<unsigned char> buf(mask.size());
    std::transform(mask.data.begin(), mask.data.end(), buf.begin(),
                   [](double v) { return static_cast<unsigned char>(v > 0.5 ? 255 : 0); });
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void write_map16(const std::filesystem::path& path, const Map& map) {
    require(map.c == 1, "write_map16: expects one channel");
    auto os = open_out(path);
    os << "P5\n" << map.w << ' ' << map.h << "\n65535\n";
    std::vector<unsigned char> buf(map.size() * 2);
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto v = static_cast<unsigned>(std::lround(std::clamp(map.data[i], 0.0, 1.0) * 65535.0));
        buf[2 * i] = static_cast<unsigned char>(v >> 8);
        buf[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Map read_map16(const std::filesystem::path& path) {
    auto is = open_in(path);
    const PnmHeader h = read_header(is, path);
    if (h.kind != '5') throw DataError("map must be a PGM: " + path.string());
    Map m(h.height, h.width, 1);
    m.data = read_samples(is, h, 1, path);
    return m;
}

}  // namespace snarm
