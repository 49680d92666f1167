"""Reference script: a ball bouncing on a trampoline membrane."""

import stubengine as engine

engine.init()
scene = engine.Scene(resolution=(1280, 640), fps=60, duration=5.0, show_viewer=False)

scene.add_plane(friction_coefficient=0.7)
scene.add_box(size=(2.0, 2.0, 0.1), mass=5.0, elasticity=1.2,
              friction_coefficient=0.6, position=(0.0, 0.0, 0.5))
scene.add_sphere(radius=0.2, mass=0.5, elasticity=0.9,
                 friction_coefficient=0.3, position=(0.0, 0.0, 2.0))

scene.set_camera(position=(4.0, 4.0, 2.5), target=(0.0, 0.0, 0.8), fov=35.0)

scene.run()
scene.save_video("genesis_video.mp4")
