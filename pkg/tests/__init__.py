# End-to-end tests driving the muscl command line
