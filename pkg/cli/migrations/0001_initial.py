# Generated by Django 5.2.2 on 2026-10-19 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='RunManifest',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(max_length=32)),
                ('output_dir', models.CharField(max_length=1024)),
                ('config_hash', models.CharField(max_length=64)),
                ('seed', models.CharField(blank=True, help_text='Root seed as a decimal string', max_length=40, null=True)),
                ('versions', models.JSONField(blank=True, default=dict)),
                ('argv', models.JSONField(blank=True, default=list)),
                ('outputs', models.JSONField(blank=True, default=dict)),
                ('wall_clock_seconds', models.FloatField(default=0.0)),
                ('status', models.CharField(choices=[('succeeded', 'Succeeded'), ('failed', 'Failed')], default='succeeded', max_length=16)),
                ('error', models.TextField(blank=True, default='')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
