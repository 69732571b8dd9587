#include <stdio.h>
#include <string.h>
#include "roughflow.h"

int main(void) {
    RfChessParams cp = rf_chess_params_default();
    RfField *f = NULL;
    if (rf_chess_field_new(&cp, 1, &f) != RF_STATUS_OK) {
        fprintf(stderr, "%s\n", rf_last_error());
        return 1;
    }
    double side, horizon, y[2];
    rf_field_extent(f, &side, &horizon);
    if (rf_field_flow_map(f, 0.0, horizon, 0.3, 0.7, y) != RF_STATUS_OK) return 2;
    double z[2];
    if (rf_field_flow_map(f, horizon, 0.0, y[0], y[1], z) != RF_STATUS_OK) return 3;
    printf("%.12f %.12f\n", z[0], z[1]);
    rf_field_free(f);

    RfLoopParams lp = rf_loop_params_default();
    lp.delta = -1.0;
    RfStatus s = rf_loop_field_new(&lp, 0, &f);
    if (s != RF_STATUS_INVALID_PARAM || strlen(rf_last_error()) == 0) return 4;
    return 0;
}
