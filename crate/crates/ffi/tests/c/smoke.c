#include <stdio.h>
#include <string.h>
#include "celp.h"

int main(void) {
    double u[3] = {1.0, 2.0, 3.0}, v[3] = {2.0, 4.0, 6.0}, c = 0.0;
    if (celp_cosine(u, v, 3, &c) != CELP_STATUS_OK || c < 0.999999999) return 1;
    if (celp_cosine(NULL, v, 3, &c) != CELP_STATUS_NULL_POINTER) return 2;
    if (strstr(celp_last_error(), "u") == NULL) return 3;

    size_t h = 0, w = 0;
    celp_feature_grid(64, 64, &h, &w);
    if (h != 16 || w != 16) return 4;

    CelpModel *model = NULL;
    if (celp_model_init(7, 8, &model) != CELP_STATUS_OK) return 5;
    static double img[3 * 64 * 64];
    static uint8_t mask[64 * 64];
    for (size_t i = 0; i < 3 * 64 * 64; i++) img[i] = (double)(i % 17) / 17.0;
    for (size_t y = 20; y < 44; y++)
        for (size_t x = 20; x < 44; x++) mask[y * 64 + x] = 1;
    uint8_t out[16 * 16];
    if (celp_model_predict(model, img, img, mask, 1, 64, 64, 0, out) != CELP_STATUS_OK) return 6;
    for (size_t i = 0; i < 256; i++)
        if (out[i] > 1) return 7;
    celp_model_free(model);
    printf("ok\n");
    return 0;
}
