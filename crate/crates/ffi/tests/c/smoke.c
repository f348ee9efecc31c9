#include <math.h>
#include <stdio.h>
#include "cfphys.h"

int main(void) {
    CfScene *scene = NULL;
    CfTrajectory *traj = NULL;
    double s[4];
    if (cf_scene_new(&scene) != CF_STATUS_OK) return 1;
    cf_scene_add_body(scene, 0.3, 0.5, 0.5, 0.0, 0.05, 10.0);
    cf_scene_add_body(scene, 0.6, 0.5, 0.0, 0.0, 0.05, 1.0);
    if (cf_simulate(scene, NULL, 0, 0.6, 25.0, &traj) != CF_STATUS_OK) return 2;
    cf_trajectory_state(traj, cf_trajectory_n_frames(traj) - 1, 1, s);
    if (fabs(s[2] - 10.0 / 11.0) > 1e-9) return 3;
    if (cf_trajectory_state(traj, 9999, 0, s) != CF_STATUS_INVALID_ARGUMENT) return 4;
    char msg[128];
    if (cf_last_error(msg, sizeof msg) == 0) return 5;
    cf_trajectory_free(traj);
    cf_scene_free(scene);
    printf("ok %s\n", cf_version());
    return 0;
}
