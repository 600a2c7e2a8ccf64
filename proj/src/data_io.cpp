#include "dilie/data_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <fstream>
#include <sstream>

#include "dilie/errors.hpp"

namespace fs = std::filesystem;

namespace dilie {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

Image from_rgb8(const std::vector<unsigned char>& rgb, int h, int w) {
    Image img(h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c)
            img.px[static_cast<std::size_t>(c) * plane + p] = rgb[p * 3 + c] / 255.0;
    return img;
}

Image load_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png decoder init failed: " + path);
    }
    std::vector<unsigned char> rgb;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png decode failed: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    rgb.resize(static_cast<std::size_t>(h) * w * 3);
    rows.resize(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = rgb.data() + std::size_t(y) * w * 3;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return from_rgb8(rgb, h, w);
}

struct JpegErr {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

void jpeg_err_exit(j_common_ptr cinfo) {
    std::longjmp(reinterpret_cast<JpegErr*>(cinfo->err)->jump, 1);
}

Image load_jpeg(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open image: " + path);
    jpeg_decompress_struct cinfo;
    JpegErr err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_err_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("jpeg decode failed: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    std::vector<unsigned char> rgb(static_cast<std::size_t>(h) * w * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* row = rgb.data() + std::size_t(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_rgb8(rgb, h, w);
}

bool has_suffix_nocase(const std::string& s, const std::string& suf) {
    if (s.size() < suf.size()) return false;
    for (std::size_t i = 0; i < suf.size(); ++i)
        if (std::tolower(s[s.size() - suf.size() + i]) != std::tolower(suf[i])) return false;
    return true;
}

std::vector<unsigned char> to_rgb8(const Image& img) {
    const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
    std::vector<unsigned char> rgb(plane * 3);
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) {
            const double v = std::min(1.0, std::max(0.0, img.px[std::size_t(c) * plane + p]));
            rgb[p * 3 + c] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
        }
    return rgb;
}

void save_png(const std::string& path, const Image& img) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png encoder init failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png encode failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
                 static_cast<png_uint_32>(img.height()), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> rgb = to_rgb8(img);
    for (int y = 0; y < img.height(); ++y)
        png_write_row(png, rgb.data() + std::size_t(y) * img.width() * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_jpeg(const std::string& path, const Image& img) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot write image: " + path);
    jpeg_compress_struct cinfo;
    JpegErr err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_err_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        throw IoError("jpeg encode failed: " + path);
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, f.get());
    cinfo.image_width = static_cast<JDIMENSION>(img.width());
    cinfo.image_height = static_cast<JDIMENSION>(img.height());
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, 95, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    std::vector<unsigned char> rgb = to_rgb8(img);
    while (cinfo.next_scanline < cinfo.image_height) {
        unsigned char* row = rgb.data() + std::size_t(cinfo.next_scanline) * img.width() * 3;
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
}

// Exact box integration along one axis (separable area average).
std::vector<double> area_scale_axis(const std::vector<double>& in, int len, int count,
                                    int stride, int out_len) {
    std::vector<double> out(static_cast<std::size_t>(out_len) * count);
    const double ratio = double(len) / out_len;
    for (int o = 0; o < out_len; ++o) {
        const double lo = o * ratio, hi = (o + 1) * ratio;
        const int i0 = static_cast<int>(std::floor(lo));
        const int i1 = std::min(len - 1, static_cast<int>(std::ceil(hi)) - 1);
        for (int c = 0; c < count; ++c) {
            double acc = 0.0;
            for (int i = i0; i <= i1; ++i) {
                const double a = std::max(lo, double(i));
                const double b = std::min(hi, double(i + 1));
                if (b > a) acc += (b - a) * in[static_cast<std::size_t>(c) * stride + i];
            }
            out[static_cast<std::size_t>(o) * count + c] = acc / ratio;
        }
    }
    return out;
}

}  // namespace

Image resize_exact(const Image& img, int nh, int nw) {
    const int h = img.height(), w = img.width();
    if (nh <= 0 || nw <= 0) throw ArgumentError("resize_exact: target size must be positive");
    if (nh == h && nw == w) return img;
    Tensor out({3, nh, nw});
    for (int c = 0; c < 3; ++c) {
        std::vector<double> plane(img.px.data() + std::size_t(c) * h * w,
                                  img.px.data() + std::size_t(c + 1) * h * w);
        // horizontal pass: h rows scaled w -> nw; result laid out [nw][h]
        std::vector<double> hpass = area_scale_axis(plane, w, h, w, nw);
        // vertical pass over the [nw][h] columns: h -> nh; result [nh][nw]
        std::vector<double> vpass = area_scale_axis(hpass, h, nw, h, nh);
        for (int y = 0; y < nh; ++y)
            for (int x = 0; x < nw; ++x)
                out.at(c, y, x) = vpass[static_cast<std::size_t>(y) * nw + x];
    }
    out.clamp(0.0, 1.0);
    Image res;
    res.px = std::move(out);
    return res;
}

Image resize_max_side(const Image& img, int max_side) {
    const int h = img.height(), w = img.width();
    if (max_side <= 0 || std::max(h, w) <= max_side) return img;
    int nh, nw;
    if (h >= w) {
        nh = max_side;
        nw = std::max(1, static_cast<int>(std::lround(double(w) * max_side / h)));
    } else {
        nw = max_side;
        nh = std::max(1, static_cast<int>(std::lround(double(h) * max_side / w)));
    }
    return resize_exact(img, nh, nw);
}

Image load_image(const std::string& path, int cap) {
    if (!fs::exists(path)) throw IoError("image file does not exist: " + path);
    Image img;
    if (has_suffix_nocase(path, ".png")) {
        img = load_png(path);
    } else if (has_suffix_nocase(path, ".jpg") || has_suffix_nocase(path, ".jpeg")) {
        img = load_jpeg(path);
    } else {
        // sniff the magic
        std::ifstream is(path, std::ios::binary);
        unsigned char magic[2] = {0, 0};
        is.read(reinterpret_cast<char*>(magic), 2);
        if (magic[0] == 0x89 && magic[1] == 'P') img = load_png(path);
        else if (magic[0] == 0xFF && magic[1] == 0xD8) img = load_jpeg(path);
        else throw IoError("unsupported image format: " + path);
    }
    return resize_max_side(img, cap);
}

void save_image(const std::string& path, const Image& img) {
    if (has_suffix_nocase(path, ".jpg") || has_suffix_nocase(path, ".jpeg"))
        save_jpeg(path, img);
    else
        save_png(path, img);
}

namespace {

struct RolePattern {
    std::string hazy_token, gt_token;
    bool case_sensitive;
};

RolePattern role_pattern(PairConvention c) {
    switch (c) {
        case PairConvention::ihaze:
        case PairConvention::ohaze:
            return {"hazy", "GT", true};
        case PairConvention::generic_suffix:
        default:
            return {"hazy", "gt", false};
    }
}

bool strip_role(const std::string& stem, const std::string& token, bool case_sensitive,
                std::string& key) {
    const std::string suffix = "_" + token;
    if (stem.size() <= suffix.size()) return false;
    const std::string tail = stem.substr(stem.size() - suffix.size());
    if (case_sensitive ? (tail == suffix)
                       : (has_suffix_nocase(stem, suffix))) {
        key = stem.substr(0, stem.size() - suffix.size());
        return true;
    }
    return false;
}

bool is_image_file(const fs::path& p) {
    const std::string e = p.extension().string();
    return has_suffix_nocase(e, ".png") || has_suffix_nocase(e, ".jpg") ||
           has_suffix_nocase(e, ".jpeg");
}

}  // namespace

PairedDataset scan_paired(const std::string& root, PairConvention convention) {
    if (!fs::exists(root)) throw DatasetError("dataset root does not exist: " + root);
    const RolePattern pat = role_pattern(convention);

    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && is_image_file(e.path()))
            files.push_back(fs::relative(e.path(), root).generic_string());
    std::sort(files.begin(), files.end());

    std::map<std::string, std::string> hazy_by_key, gt_by_key;
    std::vector<std::string> other;
    for (const std::string& rel : files) {
        const fs::path p(rel);
        const std::string stem = (p.parent_path() / p.stem()).generic_string();
        std::string key;
        if (strip_role(stem, pat.hazy_token, pat.case_sensitive, key)) {
            if (!hazy_by_key.count(key)) hazy_by_key[key] = rel;
        } else if (strip_role(stem, pat.gt_token, pat.case_sensitive, key)) {
            if (!gt_by_key.count(key)) gt_by_key[key] = rel;
        } else {
            other.push_back(rel);
        }
    }

    PairedDataset ds;
    ds.root = root;
    for (const auto& [key, hazy] : hazy_by_key) {
        const auto gt = gt_by_key.find(key);
        if (gt == gt_by_key.end()) {
            ds.warnings.push_back("unpaired hazy file: " + hazy);
            continue;
        }
        ds.pairs.emplace_back((fs::path(root) / hazy).generic_string(),
                              (fs::path(root) / gt->second).generic_string());
    }
    for (const auto& [key, gt] : gt_by_key)
        if (!hazy_by_key.count(key)) ds.warnings.push_back("unpaired reference file: " + gt);
    for (const std::string& rel : other)
        ds.warnings.push_back("file does not match the naming convention: " + rel);

    std::sort(ds.pairs.begin(), ds.pairs.end());
    if (ds.pairs.empty())
        throw DatasetError("no usable pairs found under " + root);
    return ds;
}

void ensure_directory(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc | std::ios::binary);
        if (!os) throw IoError("cannot write " + tmp);
        os << content;
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace dilie
