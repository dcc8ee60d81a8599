#include "bare/image_io.hpp"

#include <fstream>
#include <sstream>

namespace bare {

void write_ppm(const std::string& path, const RasterU8& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
    if (!out) throw IoError("short write to " + path);
}

namespace {

// Skips whitespace and '#' comments between header tokens.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

}  // namespace

RasterU8 read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    if (next_token(in) != "P6") throw IoError(path + ": not a binary PPM (P6) file");
    RasterU8 img;
    try {
        img.width = std::stoul(next_token(in));
        img.height = std::stoul(next_token(in));
        const unsigned maxval = std::stoul(next_token(in));
        if (maxval != 255) throw IoError(path + ": unsupported maxval");
    } catch (const std::logic_error&) {
        throw IoError(path + ": malformed PPM header");
    }
    img.rgb.resize(img.width * img.height * 3);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
        throw IoError(path + ": truncated pixel data");
    return img;
}

void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& gray) {
    if (gray.size() != width * height) throw IoError("pgm: size mismatch for " + path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(gray.data()),
              static_cast<std::streamsize>(gray.size()));
    if (!out) throw IoError("short write to " + path);
}

}  // namespace bare
