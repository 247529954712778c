#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include <png.h>

#include "flexedit/tensor.hpp"

namespace flexedit {

// RGB image, values in [0,1], interleaved row-major.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<float> px;

    Image() = default;
    Image(int h_, int w_, float fill = 0.0f) : h(h_), w(w_) {
        if (h_ <= 0 || w_ <= 0)
            throw std::invalid_argument("Image: dimensions must be positive");
        px.assign(static_cast<size_t>(h_) * w_ * 3, fill);
    }

    float &at(int y, int x, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    float at(int y, int x, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    bool same_shape(const Image &o) const { return h == o.h && w == o.w; }
};

// Image plus the identifiers used by segmentation fixtures and reports.
struct ImageHandle {
    Image pixels;
    std::string id;
    std::string path;
};

inline Image load_image_png(const std::string &path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw std::runtime_error("load_image_png: cannot read " + path + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("load_image_png: decode failed for " + path + ": " + msg);
    }
    Image out(static_cast<int>(img.height), static_cast<int>(img.width));
    for (size_t i = 0; i < out.px.size(); ++i)
        out.px[i] = buf[i] / 255.0f;
    return out;
}

inline void save_image_png(const std::string &path, const Image &im) {
    if (im.h <= 0 || im.w <= 0)
        throw std::invalid_argument("save_image_png: empty image");
    std::vector<png_byte> buf(static_cast<size_t>(im.h) * im.w * 3);
    for (size_t i = 0; i < buf.size(); ++i) {
        float v = std::clamp(im.px[i], 0.0f, 1.0f);
        buf[i] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(im.w);
    img.height = static_cast<png_uint_32>(im.h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("save_image_png: cannot write " + path + ": " + img.message);
}

// Single-channel mask file, nonzero pixels count as inside.
inline Mask2D load_mask_png(const std::string &path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw std::runtime_error("load_mask_png: cannot read " + path + ": " + img.message);
    img.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("load_mask_png: decode failed for " + path + ": " + msg);
    }
    Mask2D out(static_cast<int>(img.height), static_cast<int>(img.width));
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = buf[i] ? 1 : 0;
    return out;
}

inline Mask2D load_mask_png_from_memory(const void *data, size_t size) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, data, size))
        throw std::runtime_error(std::string("load_mask_png_from_memory: ") + img.message);
    img.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("load_mask_png_from_memory: decode failed: " + msg);
    }
    Mask2D out(static_cast<int>(img.height), static_cast<int>(img.width));
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = buf[i] ? 1 : 0;
    return out;
}

inline void save_mask_png(const std::string &path, const Mask2D &m) {
    if (m.h <= 0 || m.w <= 0)
        throw std::invalid_argument("save_mask_png: empty mask");
    std::vector<png_byte> buf(m.v.size());
    for (size_t i = 0; i < buf.size(); ++i)
        buf[i] = m.v[i] ? 255 : 0;
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(m.w);
    img.height = static_cast<png_uint_32>(m.h);
    img.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("save_mask_png: cannot write " + path + ": " + img.message);
}

// Grayscale dump of a [0,1] map, for attention debugging.
inline void save_heatmap_png(const std::string &path, const Map2D &m) {
    if (m.h <= 0 || m.w <= 0)
        throw std::invalid_argument("save_heatmap_png: empty map");
    std::vector<png_byte> buf(m.v.size());
    for (size_t i = 0; i < buf.size(); ++i) {
        float v = std::clamp(m.v[i], 0.0f, 1.0f);
        buf[i] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(m.w);
    img.height = static_cast<png_uint_32>(m.h);
    img.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("save_heatmap_png: cannot write " + path + ": " + img.message);
}

} // namespace flexedit
