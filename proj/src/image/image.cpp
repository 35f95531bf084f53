#include "image/image.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>

#include "core/error.hpp"

namespace oseg {

namespace {

constexpr std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};
constexpr std::int64_t kMaxDim = 1 << 20;

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) |
           (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) |
           static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::uint8_t* data, std::size_t len) {
    put_u32be(out, static_cast<std::uint32_t>(len));
    const std::size_t type_pos = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + len);
    std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, out.data() + type_pos, static_cast<uInt>(4 + len)));
    put_u32be(out, crc);
}

std::vector<std::uint8_t> deflate_bytes(const std::vector<std::uint8_t>& raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(bound);
    if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                  6) != Z_OK) {
        throw_runtime("png: deflate failed");
    }
    out.resize(bound);
    return out;
}

std::vector<std::uint8_t> inflate_bytes(const std::vector<std::uint8_t>& comp,
                                        std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    uLongf len = static_cast<uLongf>(expected);
    const int rc =
        uncompress(out.data(), &len, comp.data(), static_cast<uLong>(comp.size()));
    if (rc != Z_OK || len != expected) {
        throw_io("png: corrupt compressed stream");
    }
    return out;
}

std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a);
    const int pb = std::abs(p - b);
    const int pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) {
        return static_cast<std::uint8_t>(a);
    }
    if (pb <= pc) {
        return static_cast<std::uint8_t>(b);
    }
    return static_cast<std::uint8_t>(c);
}

struct DecodedPng {
    std::int64_t width = 0;
    std::int64_t height = 0;
    int color_type = 0;
    std::vector<std::uint8_t> samples; // unfiltered, interleaved
};

DecodedPng decode_png(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw_io("png: cannot open '" + path + "'");
    }
    std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0) {
        throw_io("png: '" + path + "' is not a PNG file");
    }

    DecodedPng png;
    int bit_depth = -1;
    bool saw_ihdr = false, saw_iend = false;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    while (pos + 8 <= file.size() && !saw_iend) {
        const std::uint32_t len = get_u32be(&file[pos]);
        if (pos + 12 + len > file.size()) {
            throw_io("png: truncated chunk in '" + path + "'");
        }
        const char* type = reinterpret_cast<const char*>(&file[pos + 4]);
        const std::uint8_t* data = &file[pos + 8];
        const std::uint32_t want_crc = get_u32be(&file[pos + 8 + len]);
        const std::uint32_t got_crc = static_cast<std::uint32_t>(
            ::crc32(0L, &file[pos + 4], static_cast<uInt>(4 + len)));
        if (want_crc != got_crc) {
            throw_io("png: bad chunk checksum in '" + path + "'");
        }

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) {
                throw_io("png: malformed IHDR in '" + path + "'");
            }
            png.width = get_u32be(data);
            png.height = get_u32be(data + 4);
            bit_depth = data[8];
            png.color_type = data[9];
            const int compression = data[10], filter = data[11],
                      interlace = data[12];
            if (png.width <= 0 || png.height <= 0 || png.width > kMaxDim ||
                png.height > kMaxDim) {
                throw_io("png: unsupported dimensions in '" + path + "'");
            }
            if (bit_depth != 8) {
                throw_io("png: only 8-bit depth supported, '" + path + "' has " +
                         std::to_string(bit_depth));
            }
            if (png.color_type != 0 && png.color_type != 2) {
                throw_io("png: only grayscale or RGB supported, '" + path +
                         "' has color type " + std::to_string(png.color_type));
            }
            if (compression != 0 || filter != 0) {
                throw_io("png: unsupported compression/filter method in '" +
                         path + "'");
            }
            if (interlace != 0) {
                throw_io("png: interlaced images not supported: '" + path + "'");
            }
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            if (!saw_ihdr) {
                throw_io("png: IDAT before IHDR in '" + path + "'");
            }
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        } else if (!(type[0] & 0x20)) {
            // Unknown critical chunk (e.g. PLTE for palette images).
            throw_io("png: unsupported critical chunk in '" + path + "'");
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || idat.empty()) {
        throw_io("png: missing required chunks in '" + path + "'");
    }

    const int bpp = png.color_type == 2 ? 3 : 1;
    const std::size_t row_bytes = static_cast<std::size_t>(png.width) * bpp;
    const std::size_t expected = static_cast<std::size_t>(png.height) * (row_bytes + 1);
    std::vector<std::uint8_t> raw = inflate_bytes(idat, expected);

    png.samples.assign(static_cast<std::size_t>(png.height) * row_bytes, 0);
    for (std::int64_t y = 0; y < png.height; ++y) {
        const std::uint8_t* src = &raw[static_cast<std::size_t>(y) * (row_bytes + 1)];
        const int filter = src[0];
        ++src;
        std::uint8_t* dst = &png.samples[static_cast<std::size_t>(y) * row_bytes];
        const std::uint8_t* prev =
            y > 0 ? &png.samples[static_cast<std::size_t>(y - 1) * row_bytes]
                  : nullptr;
        for (std::size_t i = 0; i < row_bytes; ++i) {
            const int a = i >= static_cast<std::size_t>(bpp)
                              ? dst[i - static_cast<std::size_t>(bpp)]
                              : 0;
            const int b = prev ? prev[i] : 0;
            const int c = (prev && i >= static_cast<std::size_t>(bpp))
                              ? prev[i - static_cast<std::size_t>(bpp)]
                              : 0;
            int v = src[i];
            switch (filter) {
            case 0:
                break;
            case 1:
                v += a;
                break;
            case 2:
                v += b;
                break;
            case 3:
                v += (a + b) / 2;
                break;
            case 4:
                v += paeth(a, b, c);
                break;
            default:
                throw_io("png: bad filter type in '" + path + "'");
            }
            dst[i] = static_cast<std::uint8_t>(v & 0xff);
        }
    }
    return png;
}

std::vector<std::uint8_t> encode_png(std::int64_t width, std::int64_t height,
                                     int color_type,
                                     const std::vector<std::uint8_t>& samples) {
    const int bpp = color_type == 2 ? 3 : 1;
    const std::size_t row_bytes = static_cast<std::size_t>(width) * bpp;
    if (samples.size() != static_cast<std::size_t>(height) * row_bytes) {
        throw_invalid("png: sample buffer does not match dimensions");
    }

    // Filter type 0 on every scanline keeps the stream trivially
    // reproducible.
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(height) * (row_bytes + 1));
    for (std::int64_t y = 0; y < height; ++y) {
        raw.push_back(0);
        const std::uint8_t* row = &samples[static_cast<std::size_t>(y) * row_bytes];
        raw.insert(raw.end(), row, row + row_bytes);
    }
    const std::vector<std::uint8_t> compressed = deflate_bytes(raw);

    std::vector<std::uint8_t> out(kSignature, kSignature + 8);
    std::uint8_t ihdr[13];
    ihdr[0] = static_cast<std::uint8_t>(width >> 24);
    ihdr[1] = static_cast<std::uint8_t>(width >> 16);
    ihdr[2] = static_cast<std::uint8_t>(width >> 8);
    ihdr[3] = static_cast<std::uint8_t>(width);
    ihdr[4] = static_cast<std::uint8_t>(height >> 24);
    ihdr[5] = static_cast<std::uint8_t>(height >> 16);
    ihdr[6] = static_cast<std::uint8_t>(height >> 8);
    ihdr[7] = static_cast<std::uint8_t>(height);
    ihdr[8] = 8;
    ihdr[9] = static_cast<std::uint8_t>(color_type);
    ihdr[10] = 0;
    ihdr[11] = 0;
    ihdr[12] = 0;
    append_chunk(out, "IHDR", ihdr, 13);
    append_chunk(out, "IDAT", compressed.data(), compressed.size());
    append_chunk(out, "IEND", nullptr, 0);
    return out;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw_io("cannot open '" + path + "' for writing");
    }
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    os.flush();
    if (!os) {
        throw_io("write failed for '" + path + "'");
    }
}

} // namespace

RasterImage make_image(std::int64_t width, std::int64_t height) {
    if (width <= 0 || height <= 0) {
        throw_invalid("image: dimensions must be positive");
    }
    RasterImage img;
    img.width = width;
    img.height = height;
    img.pixels.assign(static_cast<std::size_t>(width * height * 3), 0);
    return img;
}

MaskImage make_mask(std::int64_t width, std::int64_t height) {
    if (width <= 0 || height <= 0) {
        throw_invalid("mask: dimensions must be positive");
    }
    MaskImage m;
    m.width = width;
    m.height = height;
    m.values.assign(static_cast<std::size_t>(width * height), 0);
    return m;
}

RasterImage load_image(const std::string& path) {
    DecodedPng png = decode_png(path);
    if (png.color_type != 2) {
        throw_io("png: '" + path +
                 "' is not an 8-bit RGB image (found grayscale); masks load "
                 "via load_mask");
    }
    RasterImage img;
    img.width = png.width;
    img.height = png.height;
    img.pixels = std::move(png.samples);
    return img;
}

void save_image(const std::string& path, const RasterImage& img) {
    write_file(path, encode_image_png(img));
}

MaskImage load_mask(const std::string& path) {
    DecodedPng png = decode_png(path);
    if (png.color_type != 0) {
        throw_io("png: '" + path +
                 "' is not an 8-bit grayscale mask (found RGB)");
    }
    MaskImage m;
    m.width = png.width;
    m.height = png.height;
    m.values = std::move(png.samples);
    return m;
}

void save_mask(const std::string& path, const MaskImage& mask) {
    write_file(path, encode_mask_png(mask));
}

std::vector<std::uint8_t> encode_image_png(const RasterImage& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.width * img.height * 3)) {
        throw_invalid("image: buffer does not match dimensions");
    }
    return encode_png(img.width, img.height, 2, img.pixels);
}

std::vector<std::uint8_t> encode_mask_png(const MaskImage& mask) {
    if (mask.width <= 0 || mask.height <= 0 ||
        mask.values.size() != static_cast<std::size_t>(mask.width * mask.height)) {
        throw_invalid("mask: buffer does not match dimensions");
    }
    return encode_png(mask.width, mask.height, 0, mask.values);
}

} // namespace oseg
